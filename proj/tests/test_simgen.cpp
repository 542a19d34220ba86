#include <cmath>
#include <cstdio>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "doctest.h"
#include "proplab/simgen.hpp"

using namespace proplab;

namespace {

NoiseModel quiet_noise(double shrink1 = 1.0, double shrink2 = 1.0) {
  NoiseModel n;
  n.score_sigma = 0.0;
  n.stage1_shrink = shrink1;
  n.stage1_reg_sigma = 0.0;
  n.stage2_shrink = shrink2;
  n.stage2_reg_sigma = 0.0;
  n.stage2_small_extra_sigma = 0.0;
  n.np_noise_gain = 0.0;
  n.seed = 42;
  return n;
}

Scene one_object_scene(const Box& b, int cls = 0) {
  Scene s;
  s.id = 7;
  s.width = 600.0;
  s.height = 600.0;
  GtBox g;
  g.box = b;
  g.class_id = cls;
  s.objects.push_back(g);
  return s;
}

}  // namespace

TEST_CASE("class_weights pins the endpoints to 1 and 1/ratio") {
  LongTailSpec spec;
  spec.n_classes = 2;
  spec.imbalance_ratio = 100.0;
  spec.exponent = 1.0;
  const auto w = class_weights(spec);
  REQUIRE(w.size() == 2);
  CHECK(w[0] == doctest::Approx(100.0 / 101.0));
  CHECK(w[1] == doctest::Approx(1.0 / 101.0));
  CHECK(w[0] + w[1] == doctest::Approx(1.0));
  CHECK(w[0] / w[1] == doctest::Approx(100.0));
}

TEST_CASE("class_weights is geometric at exponent 1") {
  LongTailSpec spec;
  spec.n_classes = 3;
  spec.imbalance_ratio = 100.0;
  const auto w = class_weights(spec);
  REQUIRE(w.size() == 3);
  CHECK(w[0] > w[1]);
  CHECK(w[1] > w[2]);
  CHECK(w[0] / w[2] == doctest::Approx(100.0));
  CHECK(w[1] / w[2] == doctest::Approx(10.0));  // middle at sqrt(ratio)

  // a flatter curve moves mass toward the middle classes
  LongTailSpec bent = spec;
  bent.exponent = 2.0;
  const auto wb = class_weights(bent);
  CHECK(wb[1] / wb[0] > w[1] / w[0]);
  CHECK(wb[0] / wb[2] == doctest::Approx(100.0));  // endpoints unchanged
}

TEST_CASE("class_weights single class and validation") {
  LongTailSpec solo;
  solo.n_classes = 1;
  CHECK(class_weights(solo) == std::vector<double>{1.0});

  LongTailSpec bad = solo;
  bad.n_classes = 0;
  CHECK_THROWS_AS((void)class_weights(bad), std::invalid_argument);
  bad = solo;
  bad.n_classes = 2;
  bad.imbalance_ratio = 0.5;
  CHECK_THROWS_AS((void)class_weights(bad), std::invalid_argument);
  bad.imbalance_ratio = 10.0;
  bad.exponent = 0.0;
  CHECK_THROWS_AS((void)class_weights(bad), std::invalid_argument);
}

TEST_CASE("generate_dataset is deterministic per seed") {
  SceneGenConfig cfg;
  cfg.classes.n_classes = 3;
  cfg.classes.imbalance_ratio = 10.0;
  cfg.n_scenes = 20;
  cfg.canvas_width = 400.0;
  cfg.canvas_height = 300.0;
  cfg.objects_min = 1;
  cfg.objects_max = 4;

  const std::string a = dataset_to_text(generate_dataset(cfg, 5));
  const std::string b = dataset_to_text(generate_dataset(cfg, 5));
  const std::string c = dataset_to_text(generate_dataset(cfg, 6));
  CHECK(a == b);
  CHECK(a != c);
}

TEST_CASE("generated scenes respect the placement contract") {
  SceneGenConfig cfg;
  cfg.classes.n_classes = 3;
  cfg.classes.imbalance_ratio = 10.0;
  cfg.n_scenes = 40;
  cfg.canvas_width = 400.0;
  cfg.canvas_height = 300.0;
  cfg.objects_min = 1;
  cfg.objects_max = 4;
  cfg.min_object_side = 16.0;
  cfg.max_object_frac = 0.8;
  cfg.max_gt_iou = 0.3;

  const Dataset ds = generate_dataset(cfg, 19);
  REQUIRE(ds.n_classes == 3);
  REQUIRE(ds.scenes.size() == 40);
  const double max_side = 0.8 * 300.0;

  for (std::size_t s = 0; s < ds.scenes.size(); ++s) {
    const Scene& scene = ds.scenes[s];
    CHECK(scene.id == static_cast<int>(s));
    CHECK(scene.width == 400.0);
    CHECK(scene.height == 300.0);
    CHECK(scene.objects.size() >= 1);
    CHECK(scene.objects.size() <= 4);

    for (const GtBox& g : scene.objects) {
      CHECK(g.box.x1 >= 0.0);
      CHECK(g.box.y1 >= 0.0);
      CHECK(g.box.x2 <= 400.0);
      CHECK(g.box.y2 <= 300.0);
      CHECK(g.class_id >= 0);
      CHECK(g.class_id < 3);
      CHECK_FALSE(g.difficult);
      // sizes are drawn as geometric-mean side by aspect in [1/2, 2]
      const double side = std::sqrt(g.box.area());
      CHECK(side >= 16.0 - 1e-9);
      CHECK(side <= max_side + 1e-9);
      const double aspect = g.box.width() / g.box.height();
      CHECK(aspect >= 0.5 - 1e-9);
      CHECK(aspect <= 2.0 + 1e-9);
    }
    for (std::size_t i = 0; i < scene.objects.size(); ++i)
      for (std::size_t j = i + 1; j < scene.objects.size(); ++j)
        CHECK(iou(scene.objects[i].box, scene.objects[j].box) <= 0.3 + 1e-12);
  }
}

TEST_CASE("negative_fraction 1 produces only empty scenes") {
  SceneGenConfig cfg;
  cfg.n_scenes = 10;
  cfg.negative_fraction = 1.0;
  const Dataset ds = generate_dataset(cfg, 3);
  REQUIRE(ds.scenes.size() == 10);
  for (const Scene& s : ds.scenes) {
    CHECK(s.objects.empty());
    CHECK(s.width == 600.0);
  }
}

TEST_CASE("generate_dataset validates its config") {
  SceneGenConfig cfg;
  cfg.n_scenes = -1;
  CHECK_THROWS_AS((void)generate_dataset(cfg, 0), std::invalid_argument);

  cfg = SceneGenConfig{};
  cfg.canvas_width = 10.0;
  cfg.canvas_height = 10.0;  // max_side 8 < min_object_side 16
  CHECK_THROWS_AS((void)generate_dataset(cfg, 0), std::invalid_argument);

  cfg = SceneGenConfig{};
  cfg.objects_max = 0;  // below objects_min
  CHECK_THROWS_AS((void)generate_dataset(cfg, 0), std::invalid_argument);

  // a canvas that cannot hold the requested object count under the overlap
  // cap fails loudly instead of looping forever
  cfg = SceneGenConfig{};
  cfg.canvas_width = 24.0;
  cfg.canvas_height = 24.0;
  cfg.min_object_side = 16.0;
  cfg.max_object_frac = 1.0;
  cfg.objects_min = 30;
  cfg.objects_max = 30;
  CHECK_THROWS_AS((void)generate_dataset(cfg, 0), std::runtime_error);
}

TEST_CASE("quiet oracle scorer reports exact best IoU and exact regression") {
  const Box gt{100.0, 100.0, 200.0, 180.0};
  const Scene scene = one_object_scene(gt);
  const OracleScorer scorer(scene, quiet_noise(), 1);

  const std::vector<Box> refs = {
      gt,                                // sitting on the object
      {120.0, 100.0, 220.0, 180.0},      // overlapping
      {400.0, 400.0, 500.0, 500.0},      // disjoint
  };
  const auto out = scorer.score_and_regress(refs);
  REQUIRE(out.size() == 3);

  CHECK(out[0].objectness == 1.0);
  CHECK(out[0].delta.tx == 0.0);
  CHECK(out[0].delta.ty == 0.0);
  CHECK(out[0].delta.tw == 0.0);
  CHECK(out[0].delta.th == 0.0);

  CHECK(out[1].objectness == iou(refs[1], gt));
  const Box refined = decode(out[1].delta, refs[1]);
  CHECK(refined.x1 == doctest::Approx(gt.x1).epsilon(1e-9));
  CHECK(refined.y1 == doctest::Approx(gt.y1).epsilon(1e-9));
  CHECK(refined.x2 == doctest::Approx(gt.x2).epsilon(1e-9));
  CHECK(refined.y2 == doctest::Approx(gt.y2).epsilon(1e-9));

  CHECK(out[2].objectness == 0.0);
  CHECK(out[2].delta.tx == 0.0);
}

TEST_CASE("quiet scorer with partial shrink closes that fraction of the gap") {
  const Box gt{100.0, 100.0, 200.0, 180.0};
  const Scene scene = one_object_scene(gt);
  const OracleScorer scorer(scene, quiet_noise(0.5), 1);

  const Box ref{120.0, 100.0, 220.0, 180.0};
  const auto out = scorer.score_and_regress(std::vector<Box>{ref});
  const RegressionDelta full = encode(gt, ref);
  CHECK(out[0].delta.tx == doctest::Approx(0.5 * full.tx));
  CHECK(out[0].delta.tw == doctest::Approx(0.5 * full.tw));
}

TEST_CASE("a quiet second pass leaves an exact proposal untouched bit for bit") {
  const Box gt{100.0, 100.0, 200.0, 180.0};
  const Scene scene = one_object_scene(gt);
  const OracleScorer pass2(scene, quiet_noise(), 2);
  const auto out = pass2.score_and_regress(std::vector<Box>{gt});
  CHECK(decode(out[0].delta, gt) == gt);
}

TEST_CASE("small objects draw one shared bias per gt in the second pass") {
  const Box gt{100.0, 100.0, 130.0, 130.0};  // side 30, well under 64
  const Scene scene = one_object_scene(gt);
  NoiseModel n = quiet_noise();
  n.stage2_small_extra_sigma = 0.4;
  const OracleScorer pass2(scene, n, 2);

  const std::vector<Box> refs = {
      {98.0, 101.0, 131.0, 129.0},
      {104.0, 97.0, 128.0, 133.0},
  };
  const auto out = pass2.score_and_regress(refs);

  // the reported delta is shrunk-encode plus a bias shared across matches
  const RegressionDelta e0 = encode(gt, refs[0]);
  const RegressionDelta e1 = encode(gt, refs[1]);
  const double bias_tx0 = out[0].delta.tx - e0.tx;
  const double bias_tx1 = out[1].delta.tx - e1.tx;
  CHECK(bias_tx0 == doctest::Approx(bias_tx1).epsilon(1e-12));
  CHECK(bias_tx0 != 0.0);
  const double bias_th0 = out[0].delta.th - e0.th;
  const double bias_th1 = out[1].delta.th - e1.th;
  CHECK(bias_th0 == doctest::Approx(bias_th1).epsilon(1e-12));

  // a different augmentation run draws a fresh bias
  const OracleScorer other_run(scene, n, 2, /*run_tag=*/1);
  const auto out2 = other_run.score_and_regress(refs);
  CHECK(out2[0].delta.tx - e0.tx != doctest::Approx(bias_tx0).epsilon(1e-9));

  // large objects are exempt
  const Box big{100.0, 100.0, 200.0, 200.0};
  const Scene big_scene = one_object_scene(big);
  const OracleScorer big_pass(big_scene, n, 2);
  const auto big_out = big_pass.score_and_regress(std::vector<Box>{big});
  CHECK(decode(big_out[0].delta, big) == big);
}

TEST_CASE("oracle scorer is deterministic and validates its arguments") {
  const Scene scene = one_object_scene({10.0, 10.0, 50.0, 50.0});
  NoiseModel n;  // default, noisy
  n.seed = 9;
  const OracleScorer scorer(scene, n, 1);
  const std::vector<Box> refs = {{0.0, 0.0, 40.0, 40.0},
                                 {20.0, 20.0, 60.0, 60.0}};
  const auto a = scorer.score_and_regress(refs);
  const auto b = scorer.score_and_regress(refs);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].objectness == b[i].objectness);
    CHECK(a[i].delta.tx == b[i].delta.tx);
    CHECK(a[i].delta.th == b[i].delta.th);
  }

  CHECK_THROWS_AS(OracleScorer(scene, n, 3), std::invalid_argument);
  CHECK_THROWS_AS(OracleScorer(scene, n, 1, 0, -0.1), std::invalid_argument);
}

TEST_CASE("quiet classification oracle recovers truth on matched proposals") {
  const Box gt{100.0, 100.0, 200.0, 180.0};
  const Scene scene = one_object_scene(gt, /*cls=*/2);
  ClassifierModel m;
  m.confusion_weight = 0.0;
  m.class_logit_sigma = 0.0;
  m.objectness_sigma = 0.0;
  m.reg_shrink = 1.0;
  m.reg_sigma = 0.0;
  const ClassificationOracle oracle(scene, 4, m, 11);

  const auto out = oracle.evaluate(std::vector<Box>{gt});
  REQUIRE(out.size() == 1);
  REQUIRE(out[0].class_scores.size() == 4);

  double sum = 0.0;
  int argmax = 0;
  for (int c = 0; c < 4; ++c) {
    sum += out[0].class_scores[c];
    if (out[0].class_scores[c] > out[0].class_scores[argmax]) argmax = c;
  }
  CHECK(sum == doctest::Approx(1.0));
  CHECK(argmax == 2);
  CHECK(out[0].class_scores[2] == doctest::Approx(1.0 / 1.015));
  CHECK(out[0].box == gt);
  CHECK(out[0].objectness == 1.0);
}

TEST_CASE("confusion leaks posterior mass to the partner class") {
  const Box gt{100.0, 100.0, 200.0, 180.0};
  const Scene scene = one_object_scene(gt, /*cls=*/2);
  ClassifierModel m;
  m.confusion_weight = 0.35;
  m.class_logit_sigma = 0.0;
  m.objectness_sigma = 0.0;
  m.reg_sigma = 0.0;
  const ClassificationOracle oracle(scene, 4, m, 11);

  const auto out = oracle.evaluate(std::vector<Box>{gt});
  const auto& p = out[0].class_scores;
  // partner of class 2 is 3; raw masses 0.65 / 0.355 / floor 0.005
  const double total = 0.65 + 0.355 + 2 * 0.005;
  CHECK(p[2] == doctest::Approx(0.65 / total));
  CHECK(p[3] == doctest::Approx(0.355 / total));
  CHECK(p[0] == doctest::Approx(0.005 / total));
  CHECK(p[2] > p[3]);
  CHECK(p[3] > p[0]);
}

TEST_CASE("unmatched proposals get a flat posterior and zero objectness") {
  const Scene scene = one_object_scene({10.0, 10.0, 40.0, 40.0}, 1);
  ClassifierModel m;
  m.confusion_weight = 0.0;
  m.class_logit_sigma = 0.0;
  m.objectness_sigma = 0.0;
  m.reg_sigma = 0.0;
  const ClassificationOracle oracle(scene, 3, m, 1);

  const auto out = oracle.evaluate(std::vector<Box>{{300.0, 300.0, 400.0, 400.0}});
  for (int c = 0; c < 3; ++c)
    CHECK(out[0].class_scores[c] == doctest::Approx(1.0 / 3.0));
  CHECK(out[0].objectness == 0.0);
}

TEST_CASE("classification oracle validates its arguments") {
  const Scene scene = one_object_scene({10.0, 10.0, 40.0, 40.0});
  ClassifierModel m;
  CHECK_THROWS_AS(ClassificationOracle(scene, 0, m, 1), std::invalid_argument);
  m.confusion_weight = 1.0;
  CHECK_THROWS_AS(ClassificationOracle(scene, 2, m, 1), std::invalid_argument);
  m.confusion_weight = -0.1;
  CHECK_THROWS_AS(ClassificationOracle(scene, 2, m, 1), std::invalid_argument);
}

TEST_CASE("context prior boosts only classes present in the scene") {
  Scene scene = one_object_scene({10.0, 10.0, 40.0, 40.0}, 0);
  GtBox extra;
  extra.box = Box(100.0, 100.0, 150.0, 150.0);
  extra.class_id = 2;
  scene.objects.push_back(extra);

  const ContextPrior prior = context_prior_for(scene, 4, 0.5);
  CHECK(prior.weights() == std::vector<double>{1.5, 1.0, 1.5, 1.0});
  CHECK_FALSE(prior.is_identity());

  CHECK(context_prior_for(scene, 4, 0.0).is_identity());
  CHECK_THROWS_AS((void)context_prior_for(scene, 0, 0.5), std::invalid_argument);
  CHECK_THROWS_AS((void)context_prior_for(scene, 4, -0.5), std::invalid_argument);
}

TEST_CASE("render_at_scale rescales isotropically around the short side") {
  const Scene scene = one_object_scene({100.0, 100.0, 200.0, 180.0});
  Scene wide = scene;
  wide.width = 600.0;
  wide.height = 400.0;

  const RenderedScene r = render_at_scale(wide, 800.0);
  CHECK(r.factor == 2.0);
  CHECK(r.scene.width == 1200.0);
  CHECK(r.scene.height == 800.0);
  CHECK(r.scene.id == wide.id);
  REQUIRE(r.scene.objects.size() == 1);
  CHECK(r.scene.objects[0].box == Box{200.0, 200.0, 400.0, 360.0});

  CHECK_THROWS_AS((void)render_at_scale(wide, 0.0), std::invalid_argument);
  Scene empty;
  CHECK_THROWS_AS((void)render_at_scale(empty, 600.0), std::invalid_argument);
}

TEST_CASE("flip_scene mirrors boxes and is an involution") {
  Scene scene = one_object_scene({100.0, 50.0, 250.0, 150.0}, 1);
  scene.width = 600.0;

  const Scene flipped = flip_scene(scene);
  REQUIRE(flipped.objects.size() == 1);
  CHECK(flipped.objects[0].box == Box{350.0, 50.0, 500.0, 150.0});
  CHECK(flipped.objects[0].class_id == 1);
  CHECK(flipped.width == scene.width);

  const Scene twice = flip_scene(flipped);
  CHECK(twice.objects[0].box == scene.objects[0].box);
}

TEST_CASE("images_by_class lists each scene once per class") {
  Dataset ds;
  ds.n_classes = 3;
  ds.scenes.resize(3);
  auto add = [&](int scene, int cls) {
    GtBox g;
    g.box = Box(0.0, 0.0, 10.0, 10.0);
    g.class_id = cls;
    ds.scenes[scene].objects.push_back(g);
  };
  add(0, 0);
  add(0, 0);  // duplicate class in one scene
  add(0, 2);
  add(2, 0);

  const auto lists = images_by_class(ds);
  REQUIRE(lists.size() == 3);
  CHECK(lists[0] == std::vector<int>{0, 2});
  CHECK(lists[1].empty());
  CHECK(lists[2] == std::vector<int>{0});
}

TEST_CASE("dataset text round trips bit-exactly") {
  SceneGenConfig cfg;
  cfg.classes.n_classes = 3;
  cfg.classes.imbalance_ratio = 10.0;
  cfg.n_scenes = 8;
  cfg.negative_fraction = 0.25;
  const Dataset ds = generate_dataset(cfg, 23);

  const std::string text = dataset_to_text(ds);
  const Dataset back = dataset_from_text(text);
  CHECK(dataset_to_text(back) == text);
  CHECK(back.n_classes == ds.n_classes);
  REQUIRE(back.scenes.size() == ds.scenes.size());
  for (std::size_t i = 0; i < ds.scenes.size(); ++i) {
    REQUIRE(back.scenes[i].objects.size() == ds.scenes[i].objects.size());
    for (std::size_t j = 0; j < ds.scenes[i].objects.size(); ++j)
      CHECK(back.scenes[i].objects[j].box == ds.scenes[i].objects[j].box);
  }
}

TEST_CASE("dataset parser reports the offending line") {
  auto message_of = [](const std::string& text) -> std::string {
    try {
      (void)dataset_from_text(text);
    } catch (const std::runtime_error& e) {
      return e.what();
    }
    return "";
  };

  CHECK(message_of("not json\n").find("dataset line 1") != std::string::npos);
  CHECK(message_of("{\"scene\": {}}\n").find("expected dataset header") !=
        std::string::npos);
  CHECK(message_of("{\"dataset\": {\"format_version\": 99, \"n_classes\": 1, "
                   "\"n_scenes\": 0}}\n")
            .find("format_version") != std::string::npos);
  CHECK(message_of("").find("missing header") != std::string::npos);

  const std::string header =
      "{\"dataset\": {\"format_version\": 1, \"n_classes\": 2, \"n_scenes\": 1}}\n";
  CHECK(message_of(header + "{\"notascene\": 1}\n").find("dataset line 2") !=
        std::string::npos);
  CHECK(message_of(header +
                   "{\"scene\": {\"id\": 0, \"width\": 10, \"height\": 10, "
                   "\"objects\": [[0, 0, 5, 5, 0]]}}\n")
            .find("object tuple") != std::string::npos);
  CHECK(message_of(header +
                   "{\"scene\": {\"id\": 0, \"width\": 10, \"height\": 10, "
                   "\"objects\": [[0, 0, 5, 5, 7, 0]]}}\n")
            .find("catalog") != std::string::npos);
  CHECK(message_of(header).find("declares 1") != std::string::npos);
}

TEST_CASE("dataset file io round trips") {
  SceneGenConfig cfg;
  cfg.n_scenes = 4;
  const Dataset ds = generate_dataset(cfg, 31);

  const auto path =
      (std::filesystem::temp_directory_path() / "proplab_ds_roundtrip.txt")
          .string();
  write_dataset(ds, path);
  const Dataset back = read_dataset(path);
  CHECK(dataset_to_text(back) == dataset_to_text(ds));
  std::remove(path.c_str());

  CHECK_THROWS_AS((void)read_dataset("/nonexistent/nowhere.txt"),
                  std::runtime_error);
}
