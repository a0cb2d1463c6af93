#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "topicloc/localise.hpp"
#include "topicloc/rng.hpp"

using topicloc::BoundingBox;
using topicloc::CorLocResult;
using topicloc::Detection;
using topicloc::GroundTruthBox;
using topicloc::HeatMap;
using topicloc::ImageRecord;
using topicloc::Matrix;
using topicloc::ModelConfig;
using topicloc::NWStats;
using topicloc::Rng;
using topicloc::ValidationError;

namespace {

HeatMap make_map(int cells) {
  HeatMap hm;
  hm.width_cells = cells;
  hm.height_cells = cells;
  hm.values.assign(static_cast<std::size_t>(cells) * cells, 0.0);
  return hm;
}

BoundingBox box(double x0, double y0, double x1, double y1, double score = 0.0) {
  return {x0, y0, x1, y1, score};
}

}  // namespace

TEST_CASE("intersection over union on known rectangles", "[localise]") {
  CHECK(topicloc::iou(box(0, 0, 1, 1), box(0, 0, 1, 1)) == 1.0);
  CHECK(topicloc::iou(box(0, 0, 0.4, 0.4), box(0.6, 0.6, 1, 1)) == 0.0);
  CHECK(topicloc::iou(box(0, 0, 0.5, 1), box(0, 0, 1, 1)) ==
        Catch::Approx(0.5).epsilon(0).margin(1e-15));
  // Touching edges intersect with zero area.
  CHECK(topicloc::iou(box(0, 0, 0.5, 1), box(0.5, 0, 1, 1)) == 0.0);
  // Dyadic coordinates land exactly on 0.5 with no rounding.
  CHECK(topicloc::iou(box(0, 0, 1, 1), box(0, 0, 1, 0.5)) == 0.5);

  Rng rng(8);
  for (int i = 0; i < 200; ++i) {
    auto random_box = [&] {
      const double x0 = rng.uniform01(), y0 = rng.uniform01();
      return box(x0, y0, x0 + rng.uniform01(), y0 + rng.uniform01());
    };
    const BoundingBox a = random_box(), b = random_box();
    const double ab = topicloc::iou(a, b);
    CHECK(ab == topicloc::iou(b, a));
    CHECK(ab >= 0.0);
    CHECK(ab <= 1.0 + 1e-15);
  }
}

TEST_CASE("posterior box spans two standard deviations per axis", "[localise]") {
  SECTION("diagonal covariance") {
    NWStats s;
    s.mu = {0.5, 0.5};
    s.nu = 5.0;
    s.w = topicloc::Mat2::diag(20.0, 5.0);  // (nu W)^-1 = diag(0.01, 0.04)
    const BoundingBox b = topicloc::gaussian_box(s, 3.25);
    CHECK(b.x_min == Catch::Approx(0.3).epsilon(0).margin(1e-12));
    CHECK(b.y_min == Catch::Approx(0.1).epsilon(0).margin(1e-12));
    CHECK(b.x_max == Catch::Approx(0.7).epsilon(0).margin(1e-12));
    CHECK(b.y_max == Catch::Approx(0.9).epsilon(0).margin(1e-12));
    CHECK(b.score == 3.25);
  }

  SECTION("correlated covariance uses the marginal variances") {
    // cov = [[0.01, 0.005], [0.005, 0.01]] inverted and divided by nu.
    NWStats s;
    s.mu = {0.5, 0.5};
    s.nu = 5.0;
    const topicloc::Mat2 cov(0.01, 0.005, 0.005, 0.01);
    s.w = cov.inverse() * (1.0 / s.nu);
    const BoundingBox b = topicloc::gaussian_box(s, 1.0);
    CHECK(b.x_min == Catch::Approx(0.3).epsilon(0).margin(1e-12));
    CHECK(b.y_min == Catch::Approx(0.3).epsilon(0).margin(1e-12));
    CHECK(b.x_max == Catch::Approx(0.7).epsilon(0).margin(1e-12));
    CHECK(b.y_max == Catch::Approx(0.7).epsilon(0).margin(1e-12));
  }

  SECTION("clipped to the unit square") {
    NWStats s;
    s.mu = {0.05, 0.5};
    s.nu = 5.0;
    s.w = topicloc::Mat2::diag(20.0, 20.0);  // sigma = 0.1 per axis
    const BoundingBox b = topicloc::gaussian_box(s, 1.0);
    CHECK(b.x_min == 0.0);
    CHECK(b.x_max == Catch::Approx(0.25).epsilon(0).margin(1e-12));
  }

  SECTION("shrinking the covariance shrinks the area proportionally") {
    NWStats s;
    s.mu = {0.5, 0.5};
    s.nu = 8.0;
    s.w = topicloc::Mat2::diag(30.0, 40.0);
    const double a1 = topicloc::gaussian_box(s, 1.0).area();
    s.w = s.w * 4.0;  // covariance shrinks by 4
    const double a2 = topicloc::gaussian_box(s, 1.0).area();
    CHECK(a2 == Catch::Approx(0.25 * a1).epsilon(0).margin(1e-12));
  }

  SECTION("rejects a non-PD scale") {
    NWStats s;
    s.w = topicloc::Mat2(1.0, 3.0, 3.0, 1.0);
    CHECK_THROWS_AS(topicloc::gaussian_box(s, 1.0), ValidationError);
  }
}

TEST_CASE("heat map averages class responsibility per cell", "[localise]") {
  ModelConfig config;
  config.num_classes = 1;
  config.k_bg = 1;
  config.vocab_sizes = {2};

  ImageRecord im;
  im.id = "im";
  im.width = im.height = 100;
  im.labels = {0};
  im.tokens = {{{0.55, 0.55}, {0}}, {{0.551, 0.552}, {0}}, {{1.0, 1.0}, {0}}};

  Matrix resp(3, 2);
  resp.at(0, 0) = 0.2;
  resp.at(1, 0) = 0.8;
  resp.at(2, 0) = 1.0;

  const HeatMap hm = topicloc::heat_map(im, resp, config, 0, 10);
  CHECK(hm.width_cells == 10);
  CHECK(hm.at(5, 5) == Catch::Approx(0.5).epsilon(0).margin(1e-15));  // mean of 0.2, 0.8
  CHECK(hm.at(9, 9) == 1.0);  // location (1,1) clamps into the last cell
  double total = 0.0;
  for (double v : hm.values) total += v;
  CHECK(total == Catch::Approx(1.5).epsilon(0).margin(1e-12));

  SECTION("zero responsibilities give an all-zero map") {
    const HeatMap zero = topicloc::heat_map(im, Matrix(3, 2), config, 0, 10);
    for (double v : zero.values) CHECK(v == 0.0);
  }

  SECTION("several topics per class are pooled") {
    ModelConfig two = config;
    two.topics_per_class = 2;
    Matrix r2(3, 3);
    r2.at(0, 0) = 0.3;
    r2.at(0, 1) = 0.4;
    const HeatMap pooled = topicloc::heat_map(im, r2, two, 0, 10);
    CHECK(pooled.at(5, 5) == Catch::Approx(0.35).epsilon(0).margin(1e-15));
  }

  SECTION("box blur averages the 3x3 neighbourhood with edge clamping") {
    ImageRecord corner = im;
    corner.tokens = {{{0.05, 0.05}, {0}}};
    Matrix r1(1, 2);
    r1.at(0, 0) = 1.0;
    const HeatMap blurred = topicloc::heat_map(corner, r1, config, 0, 10, true);
    CHECK(blurred.at(0, 0) == Catch::Approx(0.25).epsilon(0).margin(1e-15));
    CHECK(blurred.at(1, 1) == Catch::Approx(1.0 / 9.0).epsilon(0).margin(1e-15));
  }

  SECTION("input validation") {
    CHECK_THROWS_AS(topicloc::heat_map(im, resp, config, 0, 0), ValidationError);
    CHECK_THROWS_AS(topicloc::heat_map(im, resp, config, 1, 10), ValidationError);
    CHECK_THROWS_AS(topicloc::heat_map(im, resp, config, -1, 10), ValidationError);
  }
}

TEST_CASE("heat map proposals: components, scores, and suppression", "[localise]") {
  SECTION("an empty map proposes nothing") {
    CHECK(topicloc::boxes_from_heatmap(make_map(8)).empty());
  }

  SECTION("one rectangular blob becomes its bounding rectangle") {
    HeatMap hm = make_map(10);
    for (int y = 2; y <= 4; ++y)
      for (int x = 3; x <= 6; ++x) hm.at(y, x) = 0.8;
    const auto boxes = topicloc::boxes_from_heatmap(hm);
    REQUIRE(boxes.size() == 1);
    CHECK(boxes[0].x_min == Catch::Approx(0.3).epsilon(0).margin(1e-15));
    CHECK(boxes[0].y_min == Catch::Approx(0.2).epsilon(0).margin(1e-15));
    CHECK(boxes[0].x_max == Catch::Approx(0.7).epsilon(0).margin(1e-15));
    CHECK(boxes[0].y_max == Catch::Approx(0.5).epsilon(0).margin(1e-15));
    CHECK(boxes[0].score == Catch::Approx(0.8).epsilon(0).margin(1e-15));
  }

  SECTION("cells below the peak fraction are dropped") {
    HeatMap hm = make_map(10);
    hm.at(1, 1) = 1.0;
    hm.at(8, 8) = 0.4;
    CHECK(topicloc::boxes_from_heatmap(hm, 0.5).size() == 1);
    hm.at(8, 8) = 0.6;
    CHECK(topicloc::boxes_from_heatmap(hm, 0.5).size() == 2);
  }

  SECTION("greedy suppression keeps the better-scored rectangle") {
    // Two disconnected L-shaped components whose bounding rectangles overlap
    // at IoU 0.636: the first (value 0.9) spans rows 0-8 via row 0 and
    // column 9, the second (value 0.8) spans rows 2-9 via column 0 and row 9.
    HeatMap hm = make_map(10);
    for (int x = 0; x <= 9; ++x) hm.at(0, x) = 0.9;
    for (int y = 1; y <= 8; ++y) hm.at(y, 9) = 0.9;
    for (int y = 2; y <= 9; ++y) hm.at(y, 0) = 0.8;
    for (int x = 1; x <= 8; ++x) hm.at(9, x) = 0.8;

    const BoundingBox first = box(0.0, 0.0, 1.0, 0.9);
    const BoundingBox second = box(0.0, 0.2, 0.9, 1.0);
    REQUIRE(topicloc::iou(first, second) == Catch::Approx(0.63636363636).margin(1e-9));

    const auto suppressed = topicloc::boxes_from_heatmap(hm, 0.5, 0.5);
    REQUIRE(suppressed.size() == 1);
    CHECK(suppressed[0].x_min == first.x_min);
    CHECK(suppressed[0].y_max == first.y_max);
    // 18 cells at 0.9 plus 7 foreign cells at 0.8 inside the 90-cell rect.
    CHECK(suppressed[0].score ==
          Catch::Approx((18 * 0.9 + 7 * 0.8) / 90.0).epsilon(0).margin(1e-12));

    const auto kept = topicloc::boxes_from_heatmap(hm, 0.5, 0.7);
    REQUIRE(kept.size() == 2);
    CHECK(kept[0].score > kept[1].score);
  }

  SECTION("equal scores prefer the smaller box") {
    HeatMap hm = make_map(10);
    for (int y = 0; y <= 1; ++y)
      for (int x = 0; x <= 1; ++x) hm.at(y, x) = 1.0;
    for (int y = 6; y <= 8; ++y)
      for (int x = 6; x <= 8; ++x) hm.at(y, x) = 1.0;
    const auto boxes = topicloc::boxes_from_heatmap(hm);
    REQUIRE(boxes.size() == 2);
    CHECK(boxes[0].area() < boxes[1].area());
    CHECK(boxes[0] == box(0.0, 0.0, 0.2, 0.2, 1.0));
  }

  SECTION("kept boxes never exceed the NMS overlap among themselves") {
    Rng rng(12);
    HeatMap hm = make_map(16);
    for (double& v : hm.values) v = rng.uniform01() < 0.35 ? rng.uniform01() : 0.0;
    const auto boxes = topicloc::boxes_from_heatmap(hm, 0.3, 0.4);
    for (std::size_t i = 0; i < boxes.size(); ++i)
      for (std::size_t j = i + 1; j < boxes.size(); ++j)
        CHECK(topicloc::iou(boxes[i], boxes[j]) <= 0.4);
  }

  SECTION("threshold fraction must be usable") {
    CHECK_THROWS_AS(topicloc::boxes_from_heatmap(make_map(4), 0.0), ValidationError);
    CHECK_THROWS_AS(topicloc::boxes_from_heatmap(make_map(4), 1.5), ValidationError);
  }
}

TEST_CASE("per-image localisation strategies", "[localise]") {
  topicloc::Model model;
  model.config.num_classes = 2;
  model.config.k_bg = 1;
  model.config.vocab_sizes = {2};
  model.class_names = topicloc::default_class_names(2);

  ImageRecord im;
  im.id = "im";
  im.width = im.height = 100;
  im.labels = {0};
  for (int i = 0; i < 10; ++i)
    im.tokens.push_back({{0.2 + 0.004 * i, 0.3 + 0.004 * i}, {0}});
  for (int i = 0; i < 10; ++i)
    im.tokens.push_back({{0.7 + 0.004 * i, 0.75 + 0.004 * i}, {0}});

  topicloc::ImagePosterior post;
  post.resp = Matrix(20, 3);
  for (int i = 0; i < 20; ++i) post.resp.at(i, 0) = 1.0;
  NWStats stats;
  stats.mu = {0.45, 0.5};
  stats.nu = 10.0;
  stats.w = topicloc::Mat2::diag(10.0, 10.0);
  post.nw = {stats, NWStats{}};
  post.theta = {20.0, 0.0, 1.0};

  SECTION("gaussian returns exactly the strongest topic's box") {
    const auto boxes =
        topicloc::localise_image(model, post, im, topicloc::Strategy::kGaussian, 0);
    REQUIRE(boxes.size() == 1);
    CHECK(boxes[0] == topicloc::gaussian_box(stats, 20.0));
  }

  SECTION("sampling proposes one box per token cluster") {
    topicloc::LocaliseOptions opts;
    opts.grid_cells = 10;
    const auto boxes =
        topicloc::localise_image(model, post, im, topicloc::Strategy::kSampling, 0, opts);
    REQUIRE(boxes.size() == 2);
    const BoundingBox lo = box(0.2, 0.3, 0.3, 0.4);
    const BoundingBox hi = box(0.7, 0.7, 0.8, 0.8);
    CHECK((topicloc::iou(boxes[0], lo) > 0.5 || topicloc::iou(boxes[0], hi) > 0.5));
    CHECK((topicloc::iou(boxes[1], lo) > 0.5 || topicloc::iou(boxes[1], hi) > 0.5));
  }

  SECTION("a class with no responsibility proposes nothing under sampling") {
    const auto boxes =
        topicloc::localise_image(model, post, im, topicloc::Strategy::kSampling, 1);
    CHECK(boxes.empty());
  }

  SECTION("class id is validated") {
    CHECK_THROWS_AS(
        topicloc::localise_image(model, post, im, topicloc::Strategy::kGaussian, 2),
        ValidationError);
  }

  SECTION("strategy names round-trip") {
    CHECK(topicloc::strategy_from_string("gaussian") == topicloc::Strategy::kGaussian);
    CHECK(topicloc::strategy_from_string("sampling") == topicloc::Strategy::kSampling);
    CHECK_THROWS_AS(topicloc::strategy_from_string("magic"), ValidationError);
  }
}

TEST_CASE("corloc scores any-instance overlap above one half", "[localise]") {
  SECTION("perfect detections score 100 per class") {
    const std::vector<GroundTruthBox> gt = {{"a", 0, 10, 10, 50, 50},
                                            {"b", 1, 20, 20, 80, 90}};
    const std::vector<Detection> dets = {{"a", 0, box(10, 10, 50, 50)},
                                         {"b", 1, box(20, 20, 80, 90)}};
    const CorLocResult r = topicloc::corloc(dets, gt, 2);
    CHECK(r.per_class == std::vector<double>{100.0, 100.0});
    CHECK(r.mean == 100.0);
  }

  SECTION("exactly one half fails strict and passes non-strict") {
    // Dyadic coordinates so the ratio is exactly 0.5 in doubles:
    // intersection 0.5, union 1.0.
    const std::vector<GroundTruthBox> gt = {{"a", 0, 0, 0, 1, 0.5}};
    const std::vector<Detection> dets = {{"a", 0, box(0, 0, 1, 1)}};
    CHECK(topicloc::corloc(dets, gt, 1).correct[0] == 0);
    CHECK(topicloc::corloc(dets, gt, 1, {false}).correct[0] == 1);
  }

  SECTION("any matching instance counts") {
    const std::vector<GroundTruthBox> gt = {{"a", 0, 0, 0, 10, 10},
                                            {"a", 0, 60, 60, 100, 100}};
    const std::vector<Detection> dets = {{"a", 0, box(61, 61, 99, 99)}};
    CHECK(topicloc::corloc(dets, gt, 1).correct[0] == 1);
  }

  SECTION("wrong image or class never matches") {
    const std::vector<GroundTruthBox> gt = {{"a", 0, 0, 0, 10, 10}};
    const std::vector<Detection> dets = {{"b", 0, box(0, 0, 10, 10)},
                                         {"a", 1, box(0, 0, 10, 10)}};
    const CorLocResult r = topicloc::corloc(dets, gt, 2);
    CHECK(r.correct == std::vector<int>{0, 0});
    CHECK(r.evaluated == std::vector<int>{1, 1});
  }

  SECTION("classes without evaluations are NaN and excluded from the mean") {
    const std::vector<GroundTruthBox> gt = {{"a", 0, 0, 0, 10, 10}};
    const std::vector<Detection> dets = {{"a", 0, box(0, 0, 10, 10)}};
    const CorLocResult r = topicloc::corloc(dets, gt, 3);
    CHECK(r.per_class[0] == 100.0);
    CHECK(std::isnan(r.per_class[1]));
    CHECK(std::isnan(r.per_class[2]));
    CHECK(r.mean == 100.0);
  }

  SECTION("mixed hits and misses average per class first") {
    const std::vector<GroundTruthBox> gt = {{"a", 0, 0, 0, 10, 10},
                                            {"b", 0, 0, 0, 10, 10},
                                            {"c", 1, 0, 0, 10, 10}};
    const std::vector<Detection> dets = {{"a", 0, box(0, 0, 10, 10)},
                                         {"b", 0, box(50, 50, 60, 60)},
                                         {"c", 1, box(0, 0, 10, 10)}};
    const CorLocResult r = topicloc::corloc(dets, gt, 2);
    CHECK(r.per_class[0] == 50.0);
    CHECK(r.per_class[1] == 100.0);
    CHECK(r.mean == 75.0);
  }

  SECTION("detection class out of range is an error") {
    const std::vector<Detection> dets = {{"a", 5, box(0, 0, 1, 1)}};
    CHECK_THROWS_AS(topicloc::corloc(dets, {}, 2), ValidationError);
  }
}

TEST_CASE("coordinate conversions invert each other", "[localise]") {
  const BoundingBox b = box(0.1, 0.2, 0.6, 0.9, 3.0);
  const BoundingBox px = topicloc::to_pixels(b, 640, 480);
  CHECK(px.x_min == Catch::Approx(64.0).epsilon(0).margin(1e-12));
  CHECK(px.y_max == Catch::Approx(432.0).epsilon(0).margin(1e-12));
  CHECK(px.score == 3.0);
  const BoundingBox back = topicloc::to_normalized(px, 640, 480);
  CHECK(back.x_min == Catch::Approx(b.x_min).epsilon(0).margin(1e-15));
  CHECK(back.y_min == Catch::Approx(b.y_min).epsilon(0).margin(1e-15));
  CHECK(back.x_max == Catch::Approx(b.x_max).epsilon(0).margin(1e-15));
  CHECK(back.y_max == Catch::Approx(b.y_max).epsilon(0).margin(1e-15));
}

TEST_CASE("detections file round trip and validation", "[localise]") {
  const auto dir = std::filesystem::temp_directory_path() / "topicloc_localise_tests";
  std::filesystem::create_directories(dir);

  const std::vector<Detection> dets = {
      {"img_0001", 0, box(0.1, 0.2, 0.3, 0.4, 0.123456789012345)},
      {"img_0002", 2, box(0.0, 0.0, 1.0, 1.0, 7.5)}};
  const auto path = (dir / "dets.csv").string();
  topicloc::save_detections(dets, path);
  const auto loaded = topicloc::load_detections(path);
  REQUIRE(loaded.size() == 2);
  CHECK(loaded[0].image_id == "img_0001");
  CHECK(loaded[0].class_id == 0);
  CHECK(loaded[0].box == dets[0].box);
  CHECK(loaded[1].box == dets[1].box);

  SECTION("missing header") {
    std::ofstream out(dir / "nohdr.csv");
    out << "img,0,0,0,1,1,0.5\n";
    out.close();
    CHECK_THROWS_AS(topicloc::load_detections((dir / "nohdr.csv").string()),
                    topicloc::ParseError);
  }
  SECTION("wrong field count") {
    std::ofstream out(dir / "short.csv");
    out << "image_id,class_id,x_min,y_min,x_max,y_max,score\n";
    out << "img,0,0,0,1,1\n";
    out.close();
    CHECK_THROWS_AS(topicloc::load_detections((dir / "short.csv").string()),
                    topicloc::ParseError);
  }
  SECTION("malformed number") {
    std::ofstream out(dir / "bad.csv");
    out << "image_id,class_id,x_min,y_min,x_max,y_max,score\n";
    out << "img,zero,0,0,1,1,0.5\n";
    out.close();
    CHECK_THROWS_AS(topicloc::load_detections((dir / "bad.csv").string()),
                    topicloc::ParseError);
  }
}

TEST_CASE("heat maps serialize as 8-bit PGM with the peak recorded", "[localise]") {
  const auto dir = std::filesystem::temp_directory_path() / "topicloc_localise_tests";
  std::filesystem::create_directories(dir);
  const auto path = (dir / "map.pgm").string();

  HeatMap hm;
  hm.width_cells = 2;
  hm.height_cells = 2;
  hm.values = {0.0, 0.25, 0.5, 1.0};
  topicloc::save_heatmap_pgm(hm, path);

  std::ifstream in(path, std::ios::binary);
  std::string magic, comment_hash, comment_key;
  double peak = 0.0;
  in >> magic >> comment_hash >> comment_key >> peak;
  int w = 0, h = 0, maxval = 0;
  in >> w >> h >> maxval;
  in.get();  // single whitespace before the raster
  CHECK(magic == "P5");
  CHECK(comment_hash == "#");
  CHECK(comment_key == "max");
  CHECK(peak == 1.0);
  CHECK(w == 2);
  CHECK(h == 2);
  CHECK(maxval == 255);
  unsigned char raster[4];
  in.read(reinterpret_cast<char*>(raster), 4);
  REQUIRE(in.gcount() == 4);
  CHECK(static_cast<int>(raster[0]) == 0);
  CHECK(static_cast<int>(raster[1]) == 64);
  CHECK(static_cast<int>(raster[2]) == 128);
  CHECK(static_cast<int>(raster[3]) == 255);
}
