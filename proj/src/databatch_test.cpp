#include "doctest.h"

#include <cmath>
#include <set>
#include <sstream>

#include "isolab/databatch.hpp"
#include "isolab/errors.hpp"

using namespace isolab;

namespace {

Batch small_batch() {
  Batch b;
  b.data.resize(4, 3);
  b.data << 0, 1, 0.5, 1, 0, 0.25, 0, 0, 1, 0.2, 0.4, 0.6;
  b.labels = {3, 0, 9};
  return b;
}

std::string be32(std::uint32_t v) {
  return std::string{static_cast<char>(v >> 24), static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 8) & 0xff),
                     static_cast<char>(v & 0xff)};
}

}  // namespace

TEST_CASE("idx round trip") {
  const Batch b = small_batch();
  std::stringstream img;
  std::stringstream lab;
  write_idx(b, 2, 2, img, lab);
  const std::string bytes = img.str();
  CHECK(bytes.size() == 16 + 12);
  CHECK(bytes.substr(0, 4) == be32(kIdxImagesMagic));
  CHECK(bytes.substr(4, 4) == be32(3));
  CHECK(bytes.substr(8, 4) == be32(2));
  CHECK(lab.str().size() == 8 + 3);
  const Batch back = read_idx(img, lab);
  CHECK(back.labels == b.labels);
  REQUIRE(back.features() == 4);
  REQUIRE(back.samples() == 3);
  // pixels are stored as bytes, so values come back on the 1/255 grid
  CHECK((back.data - b.data).cwiseAbs().maxCoeff() <= 0.5 / 255.0 + 1e-15);
  CHECK(back.data(0, 1) == 1.0);
}

TEST_CASE("idx errors") {
  SUBCASE("bad magic") {
    std::istringstream img(be32(0x00000802) + be32(0) + be32(1) + be32(1));
    std::istringstream lab(be32(kIdxLabelsMagic) + be32(0));
    CHECK_THROWS_WITH_AS(read_idx(img, lab), doctest::Contains("bad magic"), FormatError);
  }
  SUBCASE("bad label magic") {
    std::istringstream img(be32(kIdxImagesMagic) + be32(0) + be32(1) + be32(1));
    std::istringstream lab(be32(kIdxImagesMagic) + be32(0));
    CHECK_THROWS_WITH_AS(read_idx(img, lab), doctest::Contains("bad magic"), FormatError);
  }
  SUBCASE("empty file") {
    std::istringstream img("");
    std::istringstream lab("");
    CHECK_THROWS_WITH_AS(read_idx(img, lab), doctest::Contains("truncated"), FormatError);
  }
  SUBCASE("truncated payload") {
    std::istringstream img(be32(kIdxImagesMagic) + be32(2) + be32(2) + be32(2) + std::string(5, '\x10'));
    std::istringstream lab(be32(kIdxLabelsMagic) + be32(2) + std::string(2, '\x01'));
    CHECK_THROWS_WITH_AS(read_idx(img, lab), doctest::Contains("truncated"), FormatError);
  }
  SUBCASE("count mismatch") {
    std::istringstream img(be32(kIdxImagesMagic) + be32(1) + be32(1) + be32(1) + std::string(1, '\0'));
    std::istringstream lab(be32(kIdxLabelsMagic) + be32(2) + std::string(2, '\0'));
    CHECK_THROWS_AS(read_idx(img, lab), FormatError);
  }
  CHECK_THROWS(load_idx("/nonexistent/images", "/nonexistent/labels"));
}

TEST_CASE("csv batches") {
  std::istringstream in("1,0.5,0.25\n\n0,1,2\r\n");
  const Batch b = read_csv_batch(in);
  CHECK(b.labels == std::vector<std::size_t>{1, 0});
  REQUIRE(b.features() == 2);
  CHECK(b.data(0, 0) == 0.5);
  CHECK(b.data(1, 1) == 2.0);

  std::istringstream ragged("1,0.5,0.25\n0,1\n");
  CHECK_THROWS_WITH_AS(read_csv_batch(ragged), doctest::Contains("line 2"), FormatError);
  std::istringstream bad("1,0.5,zz\n");
  CHECK_THROWS_WITH_AS(read_csv_batch(bad), doctest::Contains("column 3"), FormatError);
  std::istringstream label("1.5,0.5\n");
  CHECK_THROWS_AS(read_csv_batch(label), FormatError);
  std::istringstream neg("-1,0.5\n");
  CHECK_THROWS_AS(read_csv_batch(neg), FormatError);
}

TEST_CASE("select keeps labels") {
  const Batch b = small_batch();
  const Batch s = b.select({2, 0});
  CHECK(s.labels == std::vector<std::size_t>{9, 3});
  CHECK(s.data.col(0) == b.data.col(2));
  CHECK_THROWS(b.select({3}));
}

TEST_CASE("synthetic batches have the designed rank") {
  Rng rng(5);
  SynthSpec g;
  const Batch gb = synth_batch(g, 10, 10, rng);
  CHECK(numerical_rank(gb.data) == 10);
  CHECK(gb.labels.size() == 10);
  for (auto y : gb.labels) CHECK(y < 10);

  SynthSpec o;
  o.kind = SynthKind::orthogonal_cols;
  const Batch ob = synth_batch(o, 12, 7, rng);
  CHECK((ob.data.transpose() * ob.data - RealMatrix::Identity(7, 7)).cwiseAbs().maxCoeff() < 1e-10);
  CHECK_THROWS(synth_batch(o, 4, 5, rng));

  for (std::size_t groups : {1u, 2u, 3u}) {
    for (std::size_t copies : {2u, 3u}) {
      SynthSpec dup;
      dup.kind = SynthKind::duplicated;
      dup.groups = groups;
      dup.copies = copies;
      const Batch db = synth_batch(dup, 16, 12, rng);
      CHECK(numerical_rank(db.data) == 12 - groups * (copies - 1));
      CHECK(db.data.col(0) == db.data.col(1));
    }
  }
  SynthSpec too_many;
  too_many.kind = SynthKind::duplicated;
  too_many.groups = 5;
  too_many.copies = 3;
  CHECK_THROWS(synth_batch(too_many, 8, 10, rng));
  CHECK(parse_synth_kind(to_string(SynthKind::duplicated)) == SynthKind::duplicated);
  CHECK_THROWS(parse_synth_kind("cifar"));
}

TEST_CASE("mean pairwise cosine") {
  RealMatrix same(3, 4);
  for (Eigen::Index j = 0; j < 4; ++j) same.col(j) = RealVector::Constant(3, 2.0 + j);
  CHECK(mean_pairwise_cosine(same) == doctest::Approx(1.0));
  CHECK(mean_pairwise_cosine(RealMatrix::Identity(5, 5)) == doctest::Approx(0.0));
  RealMatrix two(2, 2);
  two << 1, 1, 0, 1;
  CHECK(mean_pairwise_cosine(two) == doctest::Approx(1.0 / std::sqrt(2.0)));
  RealMatrix with_zero = RealMatrix::Identity(3, 3);
  with_zero.col(2).setZero();
  CHECK(mean_pairwise_cosine(with_zero) == 0.0);
}

TEST_CASE("rank audit") {
  Rng rng(2);
  Batch pool;
  pool.data = sample_gaussian(20, 60, 1.0, rng);
  pool.data.col(5) = pool.data.col(6);
  pool.labels.assign(60, 0);
  const auto rows = rank_audit(pool, 50, 15, 99, "pool", 2);
  REQUIRE(rows.size() == 50);
  bool saw_deficient = false;
  for (std::size_t t = 0; t < rows.size(); ++t) {
    CHECK(rows[t].trial == t);
    CHECK(rows[t].n == 15);
    CHECK(rows[t].rank <= 15);
    CHECK(rows[t].rank >= 14);
    if (rows[t].rank == 14) saw_deficient = true;
    CHECK(rows[t].dataset == "pool");
  }
  CHECK(saw_deficient);
  // rank never exceeds the feature count
  for (const auto& r : rank_audit(pool, 5, 40, 1, "pool")) CHECK(r.rank <= 20);
  // same seed, any thread count
  const auto again = rank_audit(pool, 50, 15, 99, "pool", 1);
  for (std::size_t t = 0; t < rows.size(); ++t) {
    CHECK(again[t].rank == rows[t].rank);
    CHECK(again[t].mean_cosine == rows[t].mean_cosine);
  }
  CHECK_THROWS(rank_audit(pool, 1, 61, 1, "pool"));
  CHECK_THROWS(rank_audit(pool, 1, 0, 1, "pool"));

  std::ostringstream out;
  write_audit_csv({rows[0]}, out);
  CHECK(out.str().rfind("dataset,n,trial,rank,mean_cosine\npool,15,0,", 0) == 0);
}
