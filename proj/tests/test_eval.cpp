#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "wbx/eval.hpp"

using namespace wbx;
using Catch::Approx;

namespace {

Detection det_at(double xc, double yc, double w, double h) {
  Detection d;
  d.present = true;
  d.x_c = xc;
  d.y_c = yc;
  d.k = 10;
  d.box = BoundingBox{xc - w / 2, yc - h / 2, xc + w / 2, yc + h / 2};
  d.mean_confidence = 0.9;
  return d;
}

FrameTruth truth_at(double xc, double yc, double w, double h) {
  FrameTruth t;
  t.present = true;
  t.box = BoundingBox{xc - w / 2, yc - h / 2, xc + w / 2, yc + h / 2};
  return t;
}

BoundingBox random_box(Rng& rng, double extent) {
  const double x0 = rng.uniform(0, extent), y0 = rng.uniform(0, extent);
  return BoundingBox{x0, y0, x0 + rng.uniform(1, extent / 2), y0 + rng.uniform(1, extent / 2)};
}

}  // namespace

TEST_CASE("iou hand values") {
  const auto a = make_box(0, 0, 10, 10);
  CHECK(iou(a, a) == 1.0);
  CHECK(iou(a, make_box(20, 20, 30, 30)) == 0.0);
  CHECK(iou(a, make_box(5, 5, 15, 15)) == Approx(25.0 / 175.0).epsilon(1e-12));
  CHECK(iou(a, make_box(5, 5, 15, 15)) == Approx(1.0 / 7.0).epsilon(1e-12));
}

TEST_CASE("iou properties on random boxes") {
  Rng rng(55);
  for (int i = 0; i < 500; ++i) {
    const auto a = random_box(rng, 40), b = random_box(rng, 40);
    const double ab = iou(a, b);
    CHECK(ab == iou(b, a));
    CHECK(ab >= 0.0);
    CHECK(ab <= 1.0);
    CHECK(iou(a, a) == 1.0);
  }
}

TEST_CASE("match_detections outcome table") {
  MatchCriterion crit;
  crit.mm_per_pixel = 0.1;

  SECTION("perfect detection is a TP with zero offset") {
    const auto labels =
        match_detections({det_at(20, 20, 10, 10)}, {truth_at(20, 20, 10, 10)}, crit);
    REQUIRE(labels.size() == 1);
    CHECK(labels[0].outcome == FrameOutcome::true_positive);
    CHECK(labels[0].dx_mm == 0.0);
    CHECK(labels[0].dy_mm == 0.0);
    CHECK(labels[0].iou_value == 1.0);
  }
  SECTION("IoU 0.4 at threshold 0.5 counts FP and FN") {
    // boxes 10x10 overlapping 0.4/(2-0.4): shift so iou < 0.5
    const auto labels =
        match_detections({det_at(20, 20, 10, 10)}, {truth_at(25, 20, 10, 10)}, crit);
    REQUIRE(labels[0].iou_value < 0.5);
    CHECK(labels[0].outcome == FrameOutcome::missed_and_false);
  }
  SECTION("distance criterion at 2.5 mm: 30 px at 0.1 mm/px is 3.0 mm, a miss") {
    MatchCriterion dist;
    dist.kind = MatchCriterion::Kind::distance;
    dist.mm_per_pixel = 0.1;
    const auto labels =
        match_detections({det_at(50, 20, 10, 10)}, {truth_at(20, 20, 10, 10)}, dist);
    CHECK(labels[0].distance_mm == Approx(3.0));
    CHECK(labels[0].outcome == FrameOutcome::missed_and_false);

    const auto close_labels =
        match_detections({det_at(40, 20, 10, 10)}, {truth_at(20, 20, 10, 10)}, dist);
    CHECK(close_labels[0].distance_mm == Approx(2.0));
    CHECK(close_labels[0].outcome == FrameOutcome::true_positive);
  }
  SECTION("detection on an absent frame is FP; missed present frame is FN") {
    FrameTruth absent;
    absent.present = false;
    Detection none;
    const auto labels = match_detections({det_at(10, 10, 4, 4), none},
                                         {absent, truth_at(10, 10, 4, 4)}, crit);
    CHECK(labels[0].outcome == FrameOutcome::false_positive);
    CHECK(labels[1].outcome == FrameOutcome::false_negative);
  }
  SECTION("distance kind requires mm_per_pixel") {
    MatchCriterion bad;
    bad.kind = MatchCriterion::Kind::distance;
    bad.mm_per_pixel = 0.0;
    CHECK_THROWS_AS(match_detections({}, {}, bad), config_error);
  }
}

TEST_CASE("aggregate counts and ratios") {
  MatchCriterion crit;
  crit.mm_per_pixel = 0.1;

  SECTION("9 TP, 1 FP, 1 FN") {
    std::vector<FrameLabel> labels(11);
    for (int i = 0; i < 9; ++i) labels[i].outcome = FrameOutcome::true_positive;
    labels[9].outcome = FrameOutcome::false_positive;
    labels[10].outcome = FrameOutcome::false_negative;
    const auto rep = aggregate(labels, crit);
    CHECK(rep.tp == 9);
    REQUIRE(rep.precision.has_value());
    REQUIRE(rep.recall.has_value());
    CHECK(*rep.precision == Approx(0.9));
    CHECK(*rep.recall == Approx(0.9));
  }
  SECTION("all absent, no detections: undefined ratios, zero counts") {
    std::vector<FrameLabel> labels(5);
    for (auto& l : labels) l.outcome = FrameOutcome::true_negative;
    const auto rep = aggregate(labels, crit);
    CHECK(rep.tp == 0);
    CHECK(rep.fp == 0);
    CHECK(rep.fn == 0);
    CHECK_FALSE(rep.precision.has_value());
    CHECK_FALSE(rep.recall.has_value());
  }
  SECTION("hand-built 6-frame toy set") {
    // TP, TP, missed_and_false, FP, FN, TN
    std::vector<FrameLabel> labels(6);
    labels[0].outcome = FrameOutcome::true_positive;
    labels[1].outcome = FrameOutcome::true_positive;
    labels[2].outcome = FrameOutcome::missed_and_false;
    labels[3].outcome = FrameOutcome::false_positive;
    labels[4].outcome = FrameOutcome::false_negative;
    labels[5].outcome = FrameOutcome::true_negative;
    const auto rep = aggregate(labels, crit);
    CHECK(rep.tp == 2);
    CHECK(rep.fp == 2);
    CHECK(rep.fn == 2);
    CHECK(rep.tn == 1);
    CHECK(*rep.precision == Approx(0.5));
    CHECK(*rep.recall == Approx(0.5));
  }
  SECTION("aggregate is permutation-invariant") {
    Rng rng(77);
    std::vector<FrameLabel> labels(40);
    for (auto& l : labels) {
      const int r = static_cast<int>(rng.uniform_int(5));
      l.outcome = static_cast<FrameOutcome>(r);
      if (l.outcome == FrameOutcome::true_positive) {
        l.dx_mm = rng.uniform(-2, 2);
        l.dy_mm = rng.uniform(-2, 2);
      }
    }
    const auto rep1 = aggregate(labels, crit);
    for (size_t i = labels.size(); i > 1; --i)
      std::swap(labels[i - 1], labels[rng.uniform_int(i)]);
    const auto rep2 = aggregate(labels, crit);
    CHECK(rep1.tp == rep2.tp);
    CHECK(rep1.fp == rep2.fp);
    CHECK(rep1.fn == rep2.fn);
    CHECK(rep1.precision == rep2.precision);
  }
}

TEST_CASE("criterion monotonicity: lower IoU threshold never loses TPs") {
  Rng rng(88);
  std::vector<Detection> dets;
  std::vector<FrameTruth> truths;
  for (int i = 0; i < 200; ++i) {
    const double xc = rng.uniform(20, 60), yc = rng.uniform(20, 60);
    truths.push_back(truth_at(xc, yc, 12, 10));
    dets.push_back(det_at(xc + rng.uniform(-8, 8), yc + rng.uniform(-8, 8),
                          12 * rng.uniform(0.6, 1.4), 10 * rng.uniform(0.6, 1.4)));
  }
  long prev_tp = -1;
  for (const double thr : {0.9, 0.7, 0.5, 0.3, 0.1}) {
    MatchCriterion crit;
    crit.iou_threshold = thr;
    crit.mm_per_pixel = 0.1;
    const auto rep = aggregate(match_detections(dets, truths, crit), crit);
    if (prev_tp >= 0) CHECK(rep.tp >= prev_tp);
    prev_tp = rep.tp;
    // TP + FN equals the number of present ground-truth frames
    CHECK(rep.tp + rep.fn == 200);
  }
}

TEST_CASE("offset binning and export") {
  namespace fs = std::filesystem;
  const auto dir = fs::temp_directory_path() / "wbx_tests" / "offsets";
  fs::remove_all(dir);
  fs::create_directories(dir);

  SECTION("all-zero offsets give a single hot bin at the origin") {
    const std::vector<std::pair<double, double>> offs(25, {0.0, 0.0});
    const auto ex = bin_offsets(offs, 0.25);
    long total = 0, nonzero_bins = 0;
    for (const long c : ex.grid) {
      total += c;
      if (c) ++nonzero_bins;
    }
    CHECK(total == 25);
    CHECK(nonzero_bins == 1);
  }
  SECTION("bin edges cover the max offset (no drops)") {
    Rng rng(99);
    std::vector<std::pair<double, double>> offs;
    for (int i = 0; i < 500; ++i) offs.emplace_back(rng.uniform(-3.7, 3.7), rng.uniform(-3.7, 3.7));
    const auto ex = bin_offsets(offs, 0.25);
    long total = 0;
    for (const long c : ex.grid) total += c;
    CHECK(total == 500);
    CHECK(ex.range_mm >= 3.7);
    long mx = 0, my = 0;
    for (const long c : ex.marginal_x) mx += c;
    for (const long c : ex.marginal_y) my += c;
    CHECK(mx == 500);
    CHECK(my == 500);
  }
  SECTION("symmetric offsets give symmetric marginals within tolerance") {
    std::vector<std::pair<double, double>> offs;
    for (int i = 1; i <= 40; ++i) {
      const double v = 0.05 * i;
      offs.emplace_back(v, -v);
      offs.emplace_back(-v, v);
    }
    const auto ex = bin_offsets(offs, 0.25);
    for (int b = 0; b < ex.bins; ++b) {
      CHECK(ex.marginal_x[b] == ex.marginal_x[ex.bins - 1 - b]);
      CHECK(ex.marginal_y[b] == ex.marginal_y[ex.bins - 1 - b]);
    }
  }
  SECTION("export writes heatmap csv, pgm and both histograms") {
    EvalReport rep;
    rep.tp = 3;
    rep.offsets_mm = {{0.1, -0.2}, {0.4, 0.3}, {-0.9, 0.0}};
    const std::string prefix = (dir / "off").string();
    export_offsets(rep, prefix);
    CHECK(fs::exists(prefix + "_heatmap.csv"));
    CHECK(fs::exists(prefix + "_heatmap.pgm"));
    CHECK(fs::exists(prefix + "_hist_lateral.csv"));
    CHECK(fs::exists(prefix + "_hist_axial.csv"));
    const auto img = read_pgm(prefix + "_heatmap.pgm");
    CHECK(img.h == img.w);
  }
  SECTION("no true positives is an error") {
    CHECK_THROWS_AS(bin_offsets({}, 0.25), data_error);
  }
}

TEST_CASE("ablation_run structure") {
  std::vector<FrameRef> train;
  for (int i = 0; i < 100; ++i) train.push_back({0, i});
  std::vector<FrameRef> eval_set;
  for (int i = 0; i < 20; ++i) eval_set.push_back({1, i});

  SECTION("one row per condition, train sizes echoed") {
    std::vector<AblationCondition> conds;
    for (const double f : {0.2, 0.5, 1.0})
      conds.push_back({std::to_string(f), subset_frames(train, f, 9), eval_set, 9});
    const auto rows = ablation_run(conds, [](const AblationCondition& c) {
      EvalReport rep;
      rep.tp = static_cast<long>(c.train.size());
      rep.fp = 0;
      rep.fn = 0;
      rep.precision = 1.0;
      rep.recall = 0.5;
      return rep;
    });
    REQUIRE(rows.size() == 3);
    CHECK(rows[0].train_size == 20);
    CHECK(rows[1].train_size == 50);
    CHECK(rows[2].train_size == 100);
  }
  SECTION("full-fraction subset preserves the exact list") {
    const auto full = subset_frames(train, 1.0, 123);
    REQUIRE(full.size() == train.size());
    for (size_t i = 0; i < full.size(); ++i) {
      CHECK(full[i].seq == train[i].seq);
      CHECK(full[i].frame == train[i].frame);
    }
  }
  SECTION("empty training condition is rejected") {
    std::vector<AblationCondition> conds{{"empty", {}, eval_set, 1}};
    CHECK_THROWS_AS(ablation_run(conds, [](const AblationCondition&) { return EvalReport{}; }),
                    config_error);
  }
  SECTION("csv emission") {
    namespace fs = std::filesystem;
    const auto dir = fs::temp_directory_path() / "wbx_tests" / "ablation";
    fs::remove_all(dir);
    fs::create_directories(dir);
    std::vector<AblationRow> rows{{"a", 0.5, 0.25, 10}, {"b", std::nullopt, std::nullopt, 5}};
    write_ablation_csv((dir / "rows.csv").string(), rows);
    std::ifstream f(dir / "rows.csv");
    std::string line;
    std::getline(f, line);
    CHECK(line == "condition,train_size,precision,recall");
    std::getline(f, line);
    CHECK(line == "a,10,0.5,0.25");
    std::getline(f, line);
    CHECK(line == "b,5,,");
  }
}
