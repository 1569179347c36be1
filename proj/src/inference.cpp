#include "scanfill/inference.hpp"

#include "scanfill/errors.hpp"
#include "scanfill/ply.hpp"
#include "scanfill/trainer.hpp"

namespace scanfill {

namespace fs = std::filesystem;

PointCloud complete(const Prn<float>& g, const PointCloud& partial, std::optional<Vec3> viewpoint) {
  if (partial.size() != g.config().n_in) {
    throw ShapeError("input has " + std::to_string(partial.size()) + " points but the model expects " +
                     std::to_string(g.config().n_in));
  }
  ad::NoGradGuard no_grad;
  ForwardOptions fo;
  fo.viewpoint = viewpoint;
  return to_cloud(g.forward(to_tensor<float>(partial), fo).out);
}

std::vector<MetricRow> evaluate_split(const Prn<float>& g, const fs::path& root, const std::string& category,
                                      const std::string& split) {
  const auto samples = load_split(root, category, split, g.config().encodings);
  std::vector<MetricRow> rows;
  for (const auto& s : samples) {
    const fs::path gt_path = root / category / "gt" / (s.id + ".ply");
    if (!fs::exists(gt_path)) throw IoError("missing ground truth " + gt_path.string());
    ad::NoGradGuard no_grad;
    ForwardOptions fo;
    fo.input_encodings = &s.encodings;
    fo.viewpoint = s.camera.center();
    const auto out = to_cloud(g.forward(s.p_in, fo).out);
    rows.push_back({s.id, category, evaluate(out, read_ply(gt_path))});
  }
  return rows;
}

}  // namespace scanfill
