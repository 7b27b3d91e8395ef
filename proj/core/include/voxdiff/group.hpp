#pragma once

#include <array>
#include <string>
#include <string_view>

namespace voxdiff {

/// Cohort tag. A, B and C carry increasing target heterogeneity and stand in
/// for cognitively normal, early-MCI and late-MCI subjects.
enum class GroupLabel { A = 0, B = 1, C = 2 };

inline constexpr std::array<GroupLabel, 3> kAllGroups{GroupLabel::A, GroupLabel::B, GroupLabel::C};

inline constexpr std::size_t group_index(GroupLabel g) noexcept { return static_cast<std::size_t>(g); }

/// "GroupA", "GroupB", "GroupC".
std::string to_string(GroupLabel g);

/// Accepts "GroupA", "A" or "a" (likewise for B, C); throws ConfigError otherwise.
GroupLabel parse_group(std::string_view s);

}  // namespace voxdiff
