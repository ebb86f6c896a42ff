#ifndef DPPVAE_IO_HPP
#define DPPVAE_IO_HPP

#include <cstdint>
#include <string>
#include <vector>

namespace dppvae {

std::string base64_encode(const unsigned char* data, std::size_t len);
std::vector<unsigned char> base64_decode(const std::string& text);

/// Bit-exact double <-> base64 payloads for checkpoints (little-endian).
std::string encode_doubles(const std::vector<double>& values);
std::vector<double> decode_doubles(const std::string& b64);

/// Write via a temp file + rename so readers never see partial content.
void atomic_write_file(const std::string& path, const std::string& contents);
std::string read_file(const std::string& path);  // TruncatedFile if unreadable

/// Shortest round-trip decimal form, used for CSV output.
std::string format_double(double v);

}  // namespace dppvae

#endif
