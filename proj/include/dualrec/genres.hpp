#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace dualrec {

inline constexpr std::size_t kGenreCount = 18;

// Fixed genre universe in MovieLens-1M order. Index is the bit position.
inline constexpr std::array<std::string_view, kGenreCount> kGenres = {
    "Action",  "Adventure", "Animation", "Children's", "Comedy", "Crime",
    "Documentary", "Drama", "Fantasy", "Film-Noir", "Horror", "Musical",
    "Mystery", "Romance",   "Sci-Fi",    "Thriller",   "War",    "Western"};

inline std::optional<std::size_t> genre_index(std::string_view label) {
  for (std::size_t i = 0; i < kGenres.size(); ++i) {
    if (kGenres[i] == label) return i;
  }
  return std::nullopt;
}

// Set over the 18-genre universe, stored as a bitmask.
class GenreSet {
 public:
  constexpr GenreSet() = default;
  constexpr explicit GenreSet(std::uint32_t bits) : bits_(bits & kMask) {}

  constexpr void insert(std::size_t index) { bits_ |= (1u << index); }
  constexpr bool contains(std::size_t index) const {
    return (bits_ >> index) & 1u;
  }
  constexpr bool empty() const { return bits_ == 0; }
  constexpr int size() const { return std::popcount(bits_); }
  constexpr std::uint32_t bits() const { return bits_; }

  constexpr GenreSet operator&(GenreSet o) const {
    return GenreSet(bits_ & o.bits_);
  }
  constexpr GenreSet operator|(GenreSet o) const {
    return GenreSet(bits_ | o.bits_);
  }
  constexpr bool operator==(const GenreSet&) const = default;

  // Labels in universe order.
  std::vector<std::string> labels() const {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < kGenreCount; ++i) {
      if (contains(i)) out.emplace_back(kGenres[i]);
    }
    return out;
  }

  // "Animation, Children's, Comedy"
  std::string join(std::string_view sep = ", ") const {
    std::string out;
    for (std::size_t i = 0; i < kGenreCount; ++i) {
      if (!contains(i)) continue;
      if (!out.empty()) out += sep;
      out += kGenres[i];
    }
    return out;
  }

  static constexpr std::uint32_t kMask = (1u << kGenreCount) - 1;

 private:
  std::uint32_t bits_ = 0;
};

}  // namespace dualrec
