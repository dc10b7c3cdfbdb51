#include "doctest.h"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <limits>
#include <sstream>
#include <string>

#include "isolab/errors.hpp"
#include "isolab/matrix_io.hpp"
#include "isolab/rng.hpp"

using namespace isolab;

TEST_CASE("csv layout is one row per line, no header") {
  RealMatrix m(2, 3);
  m << 1.0, -0.5, 3.25, 0.1, 1e-300, 2.0;
  std::ostringstream out;
  write_matrix_csv(m, out);
  CHECK(out.str() == "1,-0.5,3.25\n0.1,1e-300,2\n");
}

TEST_CASE("csv round trip is exact") {
  Rng rng(4);
  const RealMatrix m = sample_gaussian(7, 5, 3.0, rng);
  std::stringstream io;
  write_matrix_csv(m, io);
  CHECK(read_matrix_csv(io) == m);
}

TEST_CASE("csv reader tolerates spaces, CRLF and blank lines") {
  std::istringstream in(" 1 , 2\r\n\n3,+4e0\n");
  const RealMatrix m = read_matrix_csv(in);
  REQUIRE(m.rows() == 2);
  REQUIRE(m.cols() == 2);
  CHECK(m(0, 1) == 2.0);
  CHECK(m(1, 1) == 4.0);
}

TEST_CASE("csv errors name the line") {
  std::istringstream ragged("1,2\n3\n");
  try {
    read_matrix_csv(ragged);
    FAIL("expected an error");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
  std::istringstream junk("1,2\n3,x\n");
  CHECK_THROWS_AS(read_matrix_csv(junk), FormatError);
  std::istringstream comma("1,2\n3,4,\n");
  CHECK_THROWS_AS(read_matrix_csv(comma), FormatError);
}

TEST_CASE("binary header is 16 bytes, little-endian") {
  RealMatrix m(2, 3);
  m << 1, 2, 3, 4, 5, 6;
  std::ostringstream out;
  write_matrix_binary(m, out);
  const std::string bytes = out.str();
  REQUIRE(bytes.size() == 16 + 6 * 8);
  CHECK(bytes.substr(0, 4) == "ISOM");
  CHECK(bytes.substr(4, 4) == std::string("\x02\x00\x00\x00", 4));
  CHECK(bytes.substr(8, 4) == std::string("\x03\x00\x00\x00", 4));
  CHECK(bytes.substr(12, 4) == std::string(4, '\0'));
  // 1.0 = 0x3ff0000000000000, row-major so the first value is m(0,0)
  CHECK(bytes.substr(16, 8) == std::string("\x00\x00\x00\x00\x00\x00\xf0\x3f", 8));
  // second value is m(0,1) = 2.0 = 0x4000000000000000
  CHECK(bytes.substr(24, 8) == std::string("\x00\x00\x00\x00\x00\x00\x00\x40", 8));
}

TEST_CASE("binary round trip keeps every bit") {
  RealMatrix m(2, 3);
  m << -0.0, std::numeric_limits<double>::denorm_min(), std::numeric_limits<double>::max(),
      std::numeric_limits<double>::infinity(), 1.0 / 3.0, -7.5;
  std::stringstream io;
  write_matrix_binary(m, io);
  const RealMatrix back = read_matrix_binary(io);
  REQUIRE(back.rows() == 2);
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    CHECK(std::memcmp(&m.data()[i], &back.data()[i], sizeof(double)) == 0);
  }
  CHECK(std::signbit(back(0, 0)));
}

TEST_CASE("binary reader rejects bad input") {
  std::istringstream magic(std::string("ISOX") + std::string(12, '\0'));
  CHECK_THROWS_WITH_AS(read_matrix_binary(magic), doctest::Contains("bad magic"), FormatError);
  std::istringstream shorthdr(std::string("ISOM\x01\x00", 6));
  CHECK_THROWS_WITH_AS(read_matrix_binary(shorthdr), doctest::Contains("truncated"), FormatError);
  std::istringstream payload(std::string("ISOM\x01\x00\x00\x00\x02\x00\x00\x00", 12) + std::string(4, '\0') +
                             std::string(8, '\0'));
  CHECK_THROWS_WITH_AS(read_matrix_binary(payload), doctest::Contains("truncated"), FormatError);
  std::istringstream reserved(std::string("ISOM\x01\x00\x00\x00\x01\x00\x00\x00\x01\x00\x00\x00", 16) +
                              std::string(8, '\0'));
  CHECK_THROWS_AS(read_matrix_binary(reserved), FormatError);
}

TEST_CASE("save and load pick the format from the extension") {
  const auto dir = std::filesystem::temp_directory_path() / "isolab_matrix_io_test";
  std::filesystem::create_directories(dir);
  Rng rng(1);
  const RealMatrix m = sample_gaussian(3, 4, 1.0, rng);
  save_matrix(m, dir / "m.csv");
  save_matrix(m, dir / "m.bin");
  CHECK(load_matrix(dir / "m.csv") == m);
  CHECK(load_matrix(dir / "m.bin") == m);
  CHECK(std::filesystem::file_size(dir / "m.bin") == 16 + 12 * 8);
  CHECK_THROWS(load_matrix(dir / "missing.bin"));
  std::filesystem::remove_all(dir);
}

TEST_CASE("format_double is shortest round trip") {
  CHECK(format_double(0.1) == "0.1");
  CHECK(format_double(1.0) == "1");
  CHECK(format_double(-2.5e-10) == "-2.5e-10");
  Rng rng(3);
  for (int i = 0; i < 1000; ++i) {
    const double x = rng.normal() * std::pow(10.0, rng.normal() * 50.0);
    CHECK(parse_double(format_double(x)) == x);
  }
  CHECK_THROWS_AS(parse_double(""), FormatError);
  CHECK_THROWS_AS(parse_double("1.0x"), FormatError);
  CHECK(parse_double(" 2.5 ") == 2.5);
}
