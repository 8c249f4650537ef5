#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>

namespace mirag {

/// 64-bit FNV-1a. Stable across platforms and releases; used to seed the
/// reference embeddings and to checksum KB bundles.
std::uint64_t stable_hash64(std::span<const std::uint8_t> bytes) noexcept;
std::uint64_t stable_hash64(std::string_view text) noexcept;

/// splitmix64 step: advances `state` and returns the next output.
std::uint64_t splitmix64(std::uint64_t& state) noexcept;

std::string to_hex(std::uint64_t value);

}  // namespace mirag
