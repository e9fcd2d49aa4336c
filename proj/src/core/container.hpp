// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

namespace idsan {

// On-disk container shared by projector, probe and pair-set files:
//   "IDSP" | u32 header length (LE) | UTF-8 JSON header | raw payload
// The header always carries {"version": 1, "kind": "..."}; the payload
// layout is defined per kind by the writer.
struct Container {
  nlohmann::json header;
  std::vector<std::uint8_t> payload;
};

void write_container(const std::string& path, const nlohmann::json& header,
                     const std::vector<std::uint8_t>& payload);
Container read_container(const std::string& path);

// Payload views with size validation (FormatError on mismatch).
std::vector<float> payload_as_f32(const Container& c, std::size_t expected);
std::vector<std::uint32_t> payload_as_u32(const Container& c,
                                          std::size_t expected);

void append_f32(std::vector<std::uint8_t>& payload, const float* data,
                std::size_t n);
void append_u32(std::vector<std::uint8_t>& payload, const std::uint32_t* data,
                std::size_t n);

}  // namespace idsan
