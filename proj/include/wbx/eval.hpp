#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "wbx/dataset.hpp"
#include "wbx/errors.hpp"
#include "wbx/geometry.hpp"
#include "wbx/pgm.hpp"
#include "wbx/postprocess.hpp"

namespace wbx {

struct MatchCriterion {
  enum class Kind { iou, distance };
  Kind kind = Kind::iou;
  double iou_threshold = 0.5;
  double distance_mm = 2.5;
  double mm_per_pixel = 0.0;  // required for the distance criterion

  void validate() const {
    if (!(iou_threshold > 0.0 && iou_threshold <= 1.0))
      throw config_error("criterion.iou_threshold must be in (0, 1]");
    if (!(distance_mm > 0.0)) throw config_error("criterion.distance_mm must be > 0");
    if (kind == Kind::distance && !(mm_per_pixel > 0.0))
      throw config_error("criterion: distance kind needs mm_per_pixel (from the manifest)");
  }
};

inline double iou(const BoundingBox& a, const BoundingBox& b) {
  const double ix = std::max(0.0, std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min));
  const double iy = std::max(0.0, std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min));
  const double inter = ix * iy;
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

enum class FrameOutcome { true_positive, false_positive, missed_and_false, false_negative, true_negative };

struct FrameLabel {
  std::string sequence_id;
  int frame_index = 0;
  FrameOutcome outcome = FrameOutcome::true_negative;
  double iou_value = 0.0;     // present-present pairs only
  double distance_mm = 0.0;   // present-present pairs only
  double dx_mm = 0.0, dy_mm = 0.0;  // recorded for true positives
};

// Ground truth per frame: absent when !present.
struct FrameTruth {
  std::string sequence_id;
  int frame_index = 0;
  bool present = false;
  BoundingBox box;
};

// Single-target per-frame matching per the fixed criterion. A detection on a
// present frame that misses the threshold counts as a false positive AND
// leaves the ground truth unmatched (false negative).
inline std::vector<FrameLabel> match_detections(const std::vector<Detection>& detections,
                                                const std::vector<FrameTruth>& truths,
                                                const MatchCriterion& criterion) {
  criterion.validate();
  if (detections.size() != truths.size())
    throw dim_error("match_detections: detection/truth count mismatch");
  std::vector<FrameLabel> out(truths.size());
  for (size_t i = 0; i < truths.size(); ++i) {
    FrameLabel& lab = out[i];
    lab.sequence_id = truths[i].sequence_id;
    lab.frame_index = truths[i].frame_index;
    const Detection& det = detections[i];
    const FrameTruth& gt = truths[i];
    if (det.present && gt.present) {
      const double mmpp = criterion.mm_per_pixel > 0.0 ? criterion.mm_per_pixel : 1.0;
      const double dx = (det.x_c - gt.box.center_x()) * mmpp;
      const double dy = (det.y_c - gt.box.center_y()) * mmpp;
      lab.iou_value = iou(det.box, gt.box);
      lab.distance_mm = std::sqrt(dx * dx + dy * dy);
      const bool hit = criterion.kind == MatchCriterion::Kind::iou
                           ? lab.iou_value >= criterion.iou_threshold
                           : lab.distance_mm <= criterion.distance_mm;
      if (hit) {
        lab.outcome = FrameOutcome::true_positive;
        lab.dx_mm = dx;
        lab.dy_mm = dy;
      } else {
        lab.outcome = FrameOutcome::missed_and_false;
      }
    } else if (det.present) {
      lab.outcome = FrameOutcome::false_positive;
    } else if (gt.present) {
      lab.outcome = FrameOutcome::false_negative;
    } else {
      lab.outcome = FrameOutcome::true_negative;
    }
  }
  return out;
}

struct EvalReport {
  long tp = 0, fp = 0, fn = 0, tn = 0;
  std::optional<double> precision, recall;
  std::vector<std::pair<double, double>> offsets_mm;  // one per true positive
  std::optional<double> frac_within_1p5mm;
  MatchCriterion criterion;
};

inline EvalReport aggregate(const std::vector<FrameLabel>& labels,
                            const MatchCriterion& criterion) {
  if (labels.empty()) throw data_error("aggregate: empty labeling set");
  EvalReport rep;
  rep.criterion = criterion;
  for (const auto& lab : labels) {
    switch (lab.outcome) {
      case FrameOutcome::true_positive:
        ++rep.tp;
        rep.offsets_mm.emplace_back(lab.dx_mm, lab.dy_mm);
        break;
      case FrameOutcome::false_positive:
        ++rep.fp;
        break;
      case FrameOutcome::missed_and_false:
        ++rep.fp;
        ++rep.fn;
        break;
      case FrameOutcome::false_negative:
        ++rep.fn;
        break;
      case FrameOutcome::true_negative:
        ++rep.tn;
        break;
    }
  }
  if (rep.tp + rep.fp > 0)
    rep.precision = static_cast<double>(rep.tp) / static_cast<double>(rep.tp + rep.fp);
  if (rep.tp + rep.fn > 0)
    rep.recall = static_cast<double>(rep.tp) / static_cast<double>(rep.tp + rep.fn);
  if (rep.tp > 0) {
    long within = 0;
    for (const auto& [dx, dy] : rep.offsets_mm)
      if (std::abs(dx) <= 1.5 && std::abs(dy) <= 1.5) ++within;
    rep.frac_within_1p5mm = static_cast<double>(within) / static_cast<double>(rep.tp);
  }
  return rep;
}

// --- offset exports: 2-D heatmap plus per-axis marginal histograms ---

struct OffsetExport {
  double bin_width_mm = 0.25;
  double range_mm = 0.0;  // symmetric bound actually used
  int bins = 0;           // per axis
  std::vector<long> grid;        // bins x bins, row = dy bin
  std::vector<long> marginal_x;  // lateral
  std::vector<long> marginal_y;  // axial
};

inline OffsetExport bin_offsets(const std::vector<std::pair<double, double>>& offsets_mm,
                                double bin_width_mm = 0.25) {
  if (offsets_mm.empty()) throw data_error("export_offsets: needs at least one true positive");
  OffsetExport ex;
  ex.bin_width_mm = bin_width_mm;
  double max_abs = 0.0;
  for (const auto& [dx, dy] : offsets_mm) max_abs = std::max({max_abs, std::abs(dx), std::abs(dy)});
  // edges cover the largest offset; at least one bin each side of zero
  const int half = std::max(1, static_cast<int>(std::ceil(max_abs / bin_width_mm + 1e-12)));
  ex.range_mm = half * bin_width_mm;
  ex.bins = 2 * half;
  ex.grid.assign(static_cast<size_t>(ex.bins) * ex.bins, 0);
  ex.marginal_x.assign(ex.bins, 0);
  ex.marginal_y.assign(ex.bins, 0);
  for (const auto& [dx, dy] : offsets_mm) {
    int bx = static_cast<int>(std::floor((dx + ex.range_mm) / bin_width_mm));
    int by = static_cast<int>(std::floor((dy + ex.range_mm) / bin_width_mm));
    bx = std::min(std::max(bx, 0), ex.bins - 1);
    by = std::min(std::max(by, 0), ex.bins - 1);
    ++ex.grid[static_cast<size_t>(by) * ex.bins + bx];
    ++ex.marginal_x[bx];
    ++ex.marginal_y[by];
  }
  return ex;
}

// writes <prefix>_heatmap.csv / .pgm and <prefix>_hist_{lateral,axial}.csv
inline OffsetExport export_offsets(const EvalReport& report, const std::string& prefix,
                                   double bin_width_mm = 0.25) {
  const OffsetExport ex = bin_offsets(report.offsets_mm, bin_width_mm);
  {
    std::ofstream f(prefix + "_heatmap.csv", std::ios::trunc);
    if (!f) throw data_error("export_offsets: cannot write " + prefix + "_heatmap.csv");
    f << "dx_bin_center_mm,dy_bin_center_mm,count\n";
    char buf[96];
    for (int by = 0; by < ex.bins; ++by)
      for (int bx = 0; bx < ex.bins; ++bx) {
        const double cx = -ex.range_mm + (bx + 0.5) * ex.bin_width_mm;
        const double cy = -ex.range_mm + (by + 0.5) * ex.bin_width_mm;
        std::snprintf(buf, sizeof buf, "%.4f,%.4f,%ld", cx, cy,
                      ex.grid[static_cast<size_t>(by) * ex.bins + bx]);
        f << buf << "\n";
      }
  }
  {
    long peak = 1;
    for (const long c : ex.grid) peak = std::max(peak, c);
    PgmImage img;
    img.h = ex.bins;
    img.w = ex.bins;
    img.pixels.resize(static_cast<size_t>(ex.bins) * ex.bins);
    for (size_t i = 0; i < ex.grid.size(); ++i)
      img.pixels[i] = static_cast<uint8_t>(255.0 * ex.grid[i] / peak + 0.5);
    write_pgm(prefix + "_heatmap.pgm", img);
  }
  for (const auto& [name, marginal] :
       {std::make_pair(std::string("lateral"), &ex.marginal_x),
        std::make_pair(std::string("axial"), &ex.marginal_y)}) {
    std::ofstream f(prefix + "_hist_" + name + ".csv", std::ios::trunc);
    if (!f) throw data_error("export_offsets: cannot write histogram csv");
    f << "bin_center_mm,count\n";
    char buf[64];
    for (int b = 0; b < ex.bins; ++b) {
      std::snprintf(buf, sizeof buf, "%.4f,%ld", -ex.range_mm + (b + 0.5) * ex.bin_width_mm,
                    (*marginal)[b]);
      f << buf << "\n";
    }
  }
  return ex;
}

// --- ablation driver ---

struct AblationCondition {
  std::string name;
  std::vector<FrameRef> train;
  std::vector<FrameRef> eval;
  uint64_t seed = 0;
};

struct AblationRow {
  std::string condition;
  std::optional<double> precision, recall;
  size_t train_size = 0;
};

using PipelineHandle = std::function<EvalReport(const AblationCondition&)>;

// Runs each condition through the supplied train+eval pipeline handle.
inline std::vector<AblationRow> ablation_run(const std::vector<AblationCondition>& conditions,
                                             const PipelineHandle& pipeline) {
  std::vector<AblationRow> rows;
  for (const auto& cond : conditions) {
    if (cond.train.empty())
      throw config_error("ablation: condition '" + cond.name + "' has an empty training set");
    const EvalReport rep = pipeline(cond);
    rows.push_back({cond.name, rep.precision, rep.recall, cond.train.size()});
  }
  return rows;
}

inline void write_ablation_csv(const std::string& path, const std::vector<AblationRow>& rows) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw data_error("ablation: cannot write " + path);
  f << "condition,train_size,precision,recall\n";
  for (const auto& r : rows) {
    f << r.condition << "," << r.train_size << ",";
    if (r.precision) f << *r.precision;
    f << ",";
    if (r.recall) f << *r.recall;
    f << "\n";
  }
}

// Seeded training subsets for the training-size ablation. fraction = 1 keeps
// the original list (so the full-set condition reproduces the plain run
// bitwise under the same seed).
inline std::vector<FrameRef> subset_frames(const std::vector<FrameRef>& train, double fraction,
                                           uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0))
    throw config_error("ablation: subset fraction must be in (0, 1]");
  if (fraction == 1.0) return train;
  std::vector<FrameRef> shuffled = train;
  Rng rng = derive_rng(seed, "ablation-subset");
  for (size_t i = shuffled.size(); i > 1; --i)
    std::swap(shuffled[i - 1], shuffled[rng.uniform_int(i)]);
  const size_t keep = std::max<size_t>(1, static_cast<size_t>(std::llround(train.size() * fraction)));
  shuffled.resize(keep);
  return shuffled;
}

}  // namespace wbx
