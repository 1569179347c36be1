#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "scanfill/losses.hpp"
#include "scanfill/prn.hpp"

namespace scanfill {

/// P_out for one partial. Normals of the input face `viewpoint` when given.
PointCloud complete(const Prn<float>& g, const PointCloud& partial, std::optional<Vec3> viewpoint = std::nullopt);

/// Completes every sample of <root>/<category>/<split> and scores it against
/// <root>/<category>/gt/<id>.ply. Missing ground truth raises IoError.
std::vector<MetricRow> evaluate_split(const Prn<float>& g, const std::filesystem::path& root,
                                      const std::string& category, const std::string& split);

}  // namespace scanfill
