#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>

#include "isolab/specmat.hpp"

namespace isolab {

// CSV: one matrix row per line, comma separated, '.' decimal point, no header.
// Values are written in shortest round-trip form.
void write_matrix_csv(const RealMatrix& m, std::ostream& out);
RealMatrix read_matrix_csv(std::istream& in);

// Binary: 16-byte header "ISOM", u32 rows, u32 cols, u32 reserved = 0 (all
// little-endian), then rows*cols little-endian f64 in row-major order.
void write_matrix_binary(const RealMatrix& m, std::ostream& out);
RealMatrix read_matrix_binary(std::istream& in);

void save_matrix(const RealMatrix& m, const std::filesystem::path& path);
/// Picks the format from the extension: ".csv" or anything else as binary.
RealMatrix load_matrix(const std::filesystem::path& path);

/// Shortest decimal form that parses back to the same double.
std::string format_double(double x);
/// Locale-independent parse of a complete token; throws FormatError.
double parse_double(std::string_view token);

}  // namespace isolab
