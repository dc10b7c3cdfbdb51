#include "isolab/databatch.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <stdexcept>
#include <string_view>

#include "isolab/errors.hpp"
#include "isolab/matrix_io.hpp"
#include "isolab/parallel.hpp"

namespace isolab {

Batch Batch::select(const std::vector<std::size_t>& idx) const {
  Batch out;
  out.source = source;
  out.data.resize(data.rows(), static_cast<Eigen::Index>(idx.size()));
  out.labels.reserve(idx.size());
  for (std::size_t c = 0; c < idx.size(); ++c) {
    if (idx[c] >= samples()) throw std::out_of_range("Batch::select: column index out of range");
    out.data.col(static_cast<Eigen::Index>(c)) = data.col(static_cast<Eigen::Index>(idx[c]));
    if (!labels.empty()) out.labels.push_back(labels[idx[c]]);
  }
  return out;
}

namespace {

std::uint32_t read_be32(std::istream& in, const char* what) {
  std::array<unsigned char, 4> b{};
  if (!in.read(reinterpret_cast<char*>(b.data()), 4)) throw FormatError(std::string("idx ") + what + ": truncated header");
  return (static_cast<std::uint32_t>(b[0]) << 24) | (static_cast<std::uint32_t>(b[1]) << 16) |
         (static_cast<std::uint32_t>(b[2]) << 8) | static_cast<std::uint32_t>(b[3]);
}

void write_be32(std::ostream& out, std::uint32_t v) {
  const std::array<char, 4> b = {static_cast<char>(v >> 24), static_cast<char>((v >> 16) & 0xff),
                                 static_cast<char>((v >> 8) & 0xff), static_cast<char>(v & 0xff)};
  out.write(b.data(), 4);
}

}  // namespace

Batch read_idx(std::istream& images, std::istream& labels, const std::string& source) {
  if (read_be32(images, "images") != kIdxImagesMagic) throw FormatError("idx images: bad magic");
  const std::uint32_t count = read_be32(images, "images");
  const std::uint32_t rows = read_be32(images, "images");
  const std::uint32_t cols = read_be32(images, "images");
  if (read_be32(labels, "labels") != kIdxLabelsMagic) throw FormatError("idx labels: bad magic");
  const std::uint32_t label_count = read_be32(labels, "labels");
  if (label_count != count) {
    throw FormatError("idx: " + std::to_string(count) + " images but " + std::to_string(label_count) + " labels");
  }
  const std::size_t features = static_cast<std::size_t>(rows) * cols;
  Batch out;
  out.source = source;
  out.data.resize(static_cast<Eigen::Index>(features), static_cast<Eigen::Index>(count));
  std::vector<unsigned char> buf(features);
  for (std::uint32_t s = 0; s < count; ++s) {
    if (!images.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(features))) {
      throw FormatError("idx images: truncated payload at sample " + std::to_string(s));
    }
    for (std::size_t f = 0; f < features; ++f) out.data(static_cast<Eigen::Index>(f), s) = buf[f] / 255.0;
  }
  std::vector<unsigned char> lab(count);
  if (count > 0 && !labels.read(reinterpret_cast<char*>(lab.data()), count)) {
    throw FormatError("idx labels: truncated payload");
  }
  out.labels.assign(lab.begin(), lab.end());
  return out;
}

Batch load_idx(const std::filesystem::path& images, const std::filesystem::path& labels) {
  std::ifstream img(images, std::ios::binary);
  if (!img) throw std::runtime_error("cannot open " + images.string());
  std::ifstream lab(labels, std::ios::binary);
  if (!lab) throw std::runtime_error("cannot open " + labels.string());
  return read_idx(img, lab, images.string());
}

void write_idx(const Batch& batch, std::size_t rows, std::size_t cols, std::ostream& images, std::ostream& labels) {
  if (rows * cols != batch.features()) throw std::invalid_argument("write_idx: rows*cols must equal feature count");
  if (batch.labels.size() != batch.samples()) throw std::invalid_argument("write_idx: label count mismatch");
  write_be32(images, kIdxImagesMagic);
  write_be32(images, static_cast<std::uint32_t>(batch.samples()));
  write_be32(images, static_cast<std::uint32_t>(rows));
  write_be32(images, static_cast<std::uint32_t>(cols));
  for (Eigen::Index s = 0; s < batch.data.cols(); ++s) {
    for (Eigen::Index f = 0; f < batch.data.rows(); ++f) {
      const double v = std::clamp(batch.data(f, s), 0.0, 1.0);
      images.put(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
    }
  }
  write_be32(labels, kIdxLabelsMagic);
  write_be32(labels, static_cast<std::uint32_t>(batch.samples()));
  for (std::size_t y : batch.labels) labels.put(static_cast<char>(static_cast<unsigned char>(y)));
}

Batch read_csv_batch(std::istream& in, const std::string& source) {
  std::vector<double> values;
  std::vector<std::size_t> labels;
  std::size_t features = 0;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::string_view rest(line);
    std::size_t col = 0;
    std::size_t count = 0;
    while (true) {
      const auto comma = rest.find(',');
      const auto cell = rest.substr(0, comma);
      ++col;
      double v = 0.0;
      try {
        v = parse_double(cell);
      } catch (const FormatError& e) {
        throw FormatError("csv line " + std::to_string(line_no) + ", column " + std::to_string(col) + ": " + e.what());
      }
      if (col == 1) {
        if (v < 0.0 || v != std::floor(v)) {
          throw FormatError("csv line " + std::to_string(line_no) + ": label must be a non-negative integer");
        }
        labels.push_back(static_cast<std::size_t>(v));
      } else {
        values.push_back(v);
        ++count;
      }
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
    if (labels.size() == 1) {
      features = count;
    } else if (count != features) {
      throw FormatError("csv line " + std::to_string(line_no) + ": expected " + std::to_string(features) +
                        " features, got " + std::to_string(count));
    }
  }
  Batch out;
  out.source = source;
  out.labels = std::move(labels);
  const auto n = static_cast<Eigen::Index>(out.labels.size());
  out.data.resize(static_cast<Eigen::Index>(features), n);
  for (Eigen::Index s = 0; s < n; ++s) {
    for (Eigen::Index f = 0; f < out.data.rows(); ++f) {
      out.data(f, s) = values[static_cast<std::size_t>(s) * features + static_cast<std::size_t>(f)];
    }
  }
  return out;
}

Batch load_csv_batch(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return read_csv_batch(in, path.string());
}

SynthKind parse_synth_kind(const std::string& s) {
  if (s == "gaussian") return SynthKind::gaussian;
  if (s == "orthogonal_cols") return SynthKind::orthogonal_cols;
  if (s == "duplicated") return SynthKind::duplicated;
  throw std::invalid_argument("unknown synthetic batch kind '" + s + "'");
}

std::string to_string(SynthKind k) {
  switch (k) {
    case SynthKind::gaussian: return "gaussian";
    case SynthKind::orthogonal_cols: return "orthogonal_cols";
    case SynthKind::duplicated: return "duplicated";
  }
  return "gaussian";
}

Batch synth_batch(const SynthSpec& spec, std::size_t d, std::size_t n, Rng& rng) {
  if (d == 0 || n == 0) throw std::invalid_argument("synth_batch: d and n must be positive");
  if (spec.classes == 0) throw std::invalid_argument("synth_batch: classes must be positive");
  Batch out;
  out.source = "synthetic:" + to_string(spec.kind) + ":" + std::to_string(rng.seed());
  switch (spec.kind) {
    case SynthKind::gaussian:
      out.data = sample_gaussian(d, n, 1.0, rng);
      break;
    case SynthKind::orthogonal_cols:
      if (n > d) throw std::invalid_argument("orthogonal_cols needs n <= d");
      out.data = sample_haar_orthogonal(d, rng).leftCols(static_cast<Eigen::Index>(n));
      break;
    case SynthKind::duplicated: {
      if (spec.copies < 2) throw std::invalid_argument("duplicated batch needs copies >= 2");
      if (spec.groups == 0) throw std::invalid_argument("duplicated batch needs groups >= 1");
      const std::size_t repeated = spec.groups * spec.copies;
      if (repeated > n) throw std::invalid_argument("duplicated batch: groups * copies exceeds n");
      const std::size_t distinct = n - spec.groups * (spec.copies - 1);
      const RealMatrix base = sample_gaussian(d, distinct, 1.0, rng);
      out.data.resize(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(n));
      // group g occupies columns [g*copies, (g+1)*copies); the rest are unique
      std::size_t col = 0;
      for (std::size_t g = 0; g < spec.groups; ++g) {
        for (std::size_t c = 0; c < spec.copies; ++c) out.data.col(static_cast<Eigen::Index>(col++)) = base.col(static_cast<Eigen::Index>(g));
      }
      for (std::size_t u = spec.groups; u < distinct; ++u) out.data.col(static_cast<Eigen::Index>(col++)) = base.col(static_cast<Eigen::Index>(u));
      break;
    }
  }
  out.labels.resize(n);
  for (auto& y : out.labels) y = rng.below(spec.classes);
  return out;
}

double mean_pairwise_cosine(const RealMatrix& x) {
  const Eigen::Index n = x.cols();
  if (n < 2) return 1.0;
  const RealMatrix gram = x.transpose() * x;
  const RealVector norms = gram.diagonal().cwiseSqrt();
  double sum = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double denom = norms(i) * norms(j);
      if (denom > 0.0) sum += gram(i, j) / denom;
    }
  }
  return sum / (0.5 * static_cast<double>(n) * static_cast<double>(n - 1));
}

std::vector<RankAudit> rank_audit(const Batch& batch, std::size_t trials, std::size_t n, std::uint64_t seed,
                                  const std::string& dataset, std::size_t threads) {
  if (n == 0) throw std::invalid_argument("rank_audit: n must be positive");
  if (n > batch.samples()) {
    throw std::invalid_argument("rank_audit: n = " + std::to_string(n) + " exceeds dataset size " +
                                std::to_string(batch.samples()));
  }
  std::vector<RankAudit> out(trials);
  parallel_for(trials, threads, [&](std::size_t t) {
    Rng rng(derive_seed(seed, t));
    // partial Fisher-Yates
    std::vector<std::size_t> idx(batch.samples());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t i = 0; i < n; ++i) std::swap(idx[i], idx[i + rng.below(idx.size() - i)]);
    idx.resize(n);
    const Batch sub = batch.select(idx);
    RankAudit& a = out[t];
    a.dataset = dataset;
    a.n = n;
    a.trial = t;
    a.rank = numerical_rank(sub.data);
    a.mean_cosine = mean_pairwise_cosine(sub.data);
  });
  return out;
}

void write_audit_csv(const std::vector<RankAudit>& rows, std::ostream& out) {
  out << "dataset,n,trial,rank,mean_cosine\n";
  for (const auto& r : rows) {
    out << r.dataset << ',' << r.n << ',' << r.trial << ',' << r.rank << ',' << format_double(r.mean_cosine) << '\n';
  }
}

}  // namespace isolab
