#include "derm/classes.hpp"

#include <stdexcept>

namespace derm {

namespace {
constexpr std::array<std::string_view, kNumClasses> kCodes = {"akiec", "bcc", "bkl", "df", "mel", "nv", "vasc"};
}

ClassLabel class_from_index(int index) {
  if (index < 0 || index >= kNumClasses)
    throw std::out_of_range("class index " + std::to_string(index) + " outside [0, 7)");
  return static_cast<ClassLabel>(index);
}

std::string_view code_of(ClassLabel c) { return kCodes[static_cast<std::size_t>(index_of(c))]; }

std::optional<ClassLabel> parse_class(std::string_view code) {
  for (int i = 0; i < kNumClasses; ++i)
    if (kCodes[static_cast<std::size_t>(i)] == code) return static_cast<ClassLabel>(i);
  return std::nullopt;
}

}  // namespace derm
