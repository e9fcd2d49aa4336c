// SPDX-License-Identifier: Apache-2.0
#include "core/container.hpp"

#include <cstring>
#include <fstream>

#include "core/common.hpp"

namespace idsan {

namespace {
constexpr char kMagic[4] = {'I', 'D', 'S', 'P'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xff));
  out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xff));
  out.push_back(static_cast<std::uint8_t>((v >> 16) & 0xff));
  out.push_back(static_cast<std::uint8_t>((v >> 24) & 0xff));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) |
         (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) |
         (static_cast<std::uint32_t>(p[3]) << 24);
}
}  // namespace

void write_container(const std::string& path, const nlohmann::json& header,
                     const std::vector<std::uint8_t>& payload) {
  const std::string head = header.dump();
  std::vector<std::uint8_t> bytes;
  bytes.reserve(8 + head.size() + payload.size());
  bytes.insert(bytes.end(), kMagic, kMagic + 4);
  put_u32(bytes, static_cast<std::uint32_t>(head.size()));
  bytes.insert(bytes.end(), head.begin(), head.end());
  bytes.insert(bytes.end(), payload.begin(), payload.end());

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(Err::Io, "cannot open for writing: " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(Err::Io, "write failed: " + path);
}

Container read_container(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Err::Io, "cannot open: " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    fail(Err::Format, "not a container file: " + path);
  const std::uint32_t hlen = get_u32(bytes.data() + 4);
  if (bytes.size() < 8 + static_cast<std::size_t>(hlen))
    fail(Err::Format, "truncated header: " + path);

  Container c;
  try {
    c.header = nlohmann::json::parse(bytes.begin() + 8,
                                     bytes.begin() + 8 + hlen);
  } catch (const nlohmann::json::exception& e) {
    fail(Err::Format, std::string("bad container header: ") + e.what());
  }
  c.payload.assign(bytes.begin() + 8 + hlen, bytes.end());
  return c;
}

std::vector<float> payload_as_f32(const Container& c, std::size_t expected) {
  if (c.payload.size() != expected * sizeof(float))
    fail(Err::Format, "payload size mismatch: expected " +
                          std::to_string(expected * sizeof(float)) +
                          " bytes, got " + std::to_string(c.payload.size()));
  std::vector<float> out(expected);
  std::memcpy(out.data(), c.payload.data(), c.payload.size());
  return out;
}

std::vector<std::uint32_t> payload_as_u32(const Container& c,
                                          std::size_t expected) {
  if (c.payload.size() != expected * sizeof(std::uint32_t))
    fail(Err::Format, "payload size mismatch: expected " +
                          std::to_string(expected * sizeof(std::uint32_t)) +
                          " bytes, got " + std::to_string(c.payload.size()));
  std::vector<std::uint32_t> out(expected);
  std::memcpy(out.data(), c.payload.data(), c.payload.size());
  return out;
}

void append_f32(std::vector<std::uint8_t>& payload, const float* data,
                std::size_t n) {
  const std::size_t at = payload.size();
  payload.resize(at + n * sizeof(float));
  std::memcpy(payload.data() + at, data, n * sizeof(float));
}

void append_u32(std::vector<std::uint8_t>& payload, const std::uint32_t* data,
                std::size_t n) {
  const std::size_t at = payload.size();
  payload.resize(at + n * sizeof(std::uint32_t));
  std::memcpy(payload.data() + at, data, n * sizeof(std::uint32_t));
}

}  // namespace idsan
