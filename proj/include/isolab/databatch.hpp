#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "isolab/specmat.hpp"

namespace isolab {

/// One sample per column.
struct Batch {
  RealMatrix data;  // features x samples
  std::vector<std::size_t> labels;
  std::string source;  // file path or "synthetic:<kind>:<seed>"

  std::size_t features() const { return static_cast<std::size_t>(data.rows()); }
  std::size_t samples() const { return static_cast<std::size_t>(data.cols()); }

  /// Columns `idx` in order, with their labels.
  Batch select(const std::vector<std::size_t>& idx) const;
};

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

/// IDX image/label pair. Pixels are scaled to [0, 1]. Errors mention
/// "bad magic" or "truncated".
Batch load_idx(const std::filesystem::path& images, const std::filesystem::path& labels);
Batch read_idx(std::istream& images, std::istream& labels, const std::string& source = "idx");

/// Writes pixels (rounded from [0,1] * 255) and labels as an IDX pair.
void write_idx(const Batch& batch, std::size_t rows, std::size_t cols, std::ostream& images, std::ostream& labels);

/// One sample per line: integer label, then features. No header.
Batch load_csv_batch(const std::filesystem::path& path);
Batch read_csv_batch(std::istream& in, const std::string& source = "csv");

enum class SynthKind { gaussian, orthogonal_cols, duplicated };

struct SynthSpec {
  SynthKind kind = SynthKind::gaussian;
  std::size_t groups = 1;  // duplicated: number of distinct samples repeated
  std::size_t copies = 2;  // duplicated: occurrences of each repeated sample
  std::size_t classes = 10;
};

SynthKind parse_synth_kind(const std::string& s);
std::string to_string(SynthKind k);

/// gaussian: i.i.d. N(0,1). orthogonal_cols: n orthonormal Haar columns
/// (n <= d). duplicated: gaussian with `groups` samples each appearing
/// `copies` times, so rank = n - groups * (copies - 1). Labels are uniform.
Batch synth_batch(const SynthSpec& spec, std::size_t d, std::size_t n, Rng& rng);

struct RankAudit {
  std::string dataset;
  std::size_t n = 0;
  std::size_t trial = 0;
  std::size_t rank = 0;
  double mean_cosine = 0.0;
};

/// Mean cosine similarity over distinct column pairs. Zero columns count as
/// cosine 0.
double mean_pairwise_cosine(const RealMatrix& x);

/// `trials` audits of n columns drawn without replacement. Trial t uses
/// derive_seed(seed, t).
std::vector<RankAudit> rank_audit(const Batch& batch, std::size_t trials, std::size_t n, std::uint64_t seed,
                                  const std::string& dataset, std::size_t threads = 0);

/// Header "dataset,n,trial,rank,mean_cosine".
void write_audit_csv(const std::vector<RankAudit>& rows, std::ostream& out);

}  // namespace isolab
