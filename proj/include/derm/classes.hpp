#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>

namespace derm {

inline constexpr int kNumClasses = 7;

// Index order is alphabetical by diagnosis code.
enum class ClassLabel : int { akiec = 0, bcc = 1, bkl = 2, df = 3, mel = 4, nv = 5, vasc = 6 };

inline constexpr std::array<ClassLabel, kNumClasses> kAllClasses = {
    ClassLabel::akiec, ClassLabel::bcc, ClassLabel::bkl, ClassLabel::df,
    ClassLabel::mel,   ClassLabel::nv,  ClassLabel::vasc};

constexpr int index_of(ClassLabel c) { return static_cast<int>(c); }

// Throws std::out_of_range for indices outside [0, 7).
ClassLabel class_from_index(int index);

std::string_view code_of(ClassLabel c);
std::optional<ClassLabel> parse_class(std::string_view code);

template <typename T>
using PerClass = std::array<T, kNumClasses>;

}  // namespace derm
