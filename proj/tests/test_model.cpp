#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "scenegen/generator.hpp"
#include "scenegen/model.hpp"
#include "test_util.hpp"

using namespace scenegen;
using test_util::rel_err;

namespace {

ModelConfig tiny_cfg() {
  ModelConfig cfg;
  cfg.raster = RasterConfig{8.0, 1.0, false};  // 16x16 grid
  cfg.lstm_channels = 2;
  cfg.backbone_channels = 3;
  cfg.loc_channels = 2;
  cfg.mlp_hidden = 4;
  cfg.mixture_k = 2;
  return cfg;
}

HDMap small_map() {
  HDMap m;
  LaneSegment s;
  s.id = 0;
  s.polygon = {{-8, -2}, {8, -2}, {8, 2}, {-8, 2}};
  s.orientation = 0.0;
  s.speed_limit = 10.0;
  s.traffic_light = TrafficLight::kGreen;
  m.lane_segments = {s};
  m.lane_polygons = {{LaneType::kStraight, s.polygon}};
  m.drivable_area = {s.polygon};
  m.crosswalks = {{{1, -2}, {3, -2}, {3, 2}, {1, 2}}};
  return m;
}

Scene small_scene() {
  Scene s;
  s.region_m = 8.0;
  s.sdv.actor = make_vehicle({0, 0}, 1.0, 2.0, 0.0, 3.0, 0.0);
  s.map = small_map();
  s.actors.push_back(make_vehicle({-5.5, 1.2}, 1.0, 2.2, 0.3, 4.0, 0.4));
  s.actors.push_back(make_pedestrian({2.4, -1.3}, 1.1, 2.0));
  s.actors.push_back(make_bicyclist({5.1, 0.2}, 0.6, 1.7, 3.0, 2.5, 3.1));
  return s;
}

}  // namespace

TEST_CASE("build_model is deterministic and finite") {
  auto a = build_model<double>(tiny_cfg(), 42);
  auto b = build_model<double>(tiny_cfg(), 42);
  REQUIRE(a.reg.count() == b.reg.count());
  CHECK(a.reg.count() > 40);
  for (int i = 0; i < a.reg.count(); ++i) {
    CHECK(a.reg[i].name == b.reg[i].name);
    CHECK(a.reg[i].value.data == b.reg[i].value.data);
  }
  CHECK(a.reg.all_finite());
  CHECK(a.reg.frozen());
  // Forget-gate bias initialized to +1.
  const auto& bias = a.reg.at("lstm1.b").value;
  CHECK(bias.data[tiny_cfg().lstm_channels] == 1.0);
  CHECK(bias.data[0] == 0.0);
}

TEST_CASE("model_step is deterministic and heads normalize") {
  auto mp = build_model<double>(tiny_cfg(), 7);
  const Scene s = small_scene();
  const auto mg = map_gates_value(mp, s.map);

  StepEvaluator<double> eval1(mp, &mg, to_tensor<double>(rasterize_actors(s.sdv, {}, mp.cfg.raster)),
                              nullptr);
  StepEvaluator<double> eval2(mp, &mg, to_tensor<double>(rasterize_actors(s.sdv, {}, mp.cfg.raster)),
                              nullptr);
  CHECK(eval1.class_probs() == eval2.class_probs());

  const auto probs = eval1.class_probs();
  double total = 0.0;
  for (double p : probs) total += p;
  CHECK(std::abs(total - 1.0) < 1e-6);
  REQUIRE(probs.size() == 4);

  for (ActorClass cls : {ActorClass::kVehicle, ActorClass::kPedestrian, ActorClass::kBicyclist}) {
    const auto loc = eval1.location(cls);
    double mass = 0.0;
    for (double p : loc.probs) mass += p;
    CHECK(std::abs(mass - 1.0) < 1e-6);
    const auto loc2 = eval2.location(cls);
    CHECK(loc.probs == loc2.probs);
  }
}

TEST_CASE("cached map-gates path equals the full-input path") {
  auto mp = build_model<double>(tiny_cfg(), 11);
  const Scene s = small_scene();
  const RasterConfig& rc = mp.cfg.raster;
  const RasterImage map_img = rasterize_map(s.map, rc);
  const RasterImage act_img = rasterize_actors(s.sdv, s.actors, rc);

  nn::Tape<double> t1;
  const int full = t1.constant(to_tensor<double>(compose_input(map_img, act_img)));
  const auto sv1 = model_step(t1, mp, full, -1, nn::ConvLstmState{});

  nn::Tape<double> t2;
  const int mg = map_gate_cache(t2, mp, t2.constant(to_tensor<double>(map_img)));
  const auto sv2 = model_step(t2, mp, t2.constant(to_tensor<double>(act_img)), mg,
                              nn::ConvLstmState{});

  const auto& f1 = t1.val(sv1.f);
  const auto& f2 = t2.val(sv2.f);
  REQUIRE(f1.numel() == f2.numel());
  for (int i = 0; i < f1.numel(); ++i)
    CHECK(f1.data[i] == doctest::Approx(f2.data[i]).epsilon(1e-12));
  for (int i = 0; i < 4; ++i)
    CHECK(t1.val(sv1.class_logits).data[i] ==
          doctest::Approx(t2.val(sv2.class_logits).data[i]).epsilon(1e-12));
}

TEST_CASE("scene pass decomposition matches an independent head-level recomputation") {
  auto mp = build_model<double>(tiny_cfg(), 19);
  const Scene s = small_scene();
  const RasterConfig& rc = mp.cfg.raster;

  nn::Tape<double> tape;
  const PassResult pass = scene_pass(tape, s, mp, PassOptions{});
  REQUIRE(pass.terms.size() == s.actors.size() + 1);

  // Independent route: step evaluators over teacher-forced prefixes, with
  // each term recomputed from materialized distribution parameters.
  const auto mg = map_gates_value(mp, s.map);
  const auto ordered = canonical_order(s.actors);
  StepStateValues<double> state;
  double recomputed_total = 0.0;
  std::vector<Actor> placed;
  for (std::size_t i = 0; i <= ordered.size(); ++i) {
    StepEvaluator<double> eval(mp, &mg, to_tensor<double>(rasterize_actors(s.sdv, placed, rc)),
                               state.valid ? &state : nullptr);
    const auto cls_probs = eval.class_probs();
    if (i == ordered.size()) {
      recomputed_total += -std::log(cls_probs[static_cast<int>(ActorClass::kStop)]);
      break;
    }
    const Actor& a = ordered[i];
    double term = -std::log(cls_probs[static_cast<int>(a.cls)]);
    const auto loc = eval.location(a.cls);
    term += -loc.log_prob(a.pos.x, a.pos.y);
    const int row = rc.row_of(a.pos.y), col = rc.col_of(a.pos.x);
    if (a.box) {
      term += -eval.box(a.cls, row, col).log_prob(a.box->width, a.box->length);
      term += -eval.heading(a.cls, row, col).log_prob(a.box->heading);
    }
    term += -eval.velocity(a.cls, row, col).log_prob(a.speed, velocity_direction_for(a));
    recomputed_total += term;
    CHECK(pass.terms[i].total() == doctest::Approx(term).epsilon(1e-9));
    placed.push_back(a);
    state = eval.state();
  }
  CHECK(pass.total == doctest::Approx(recomputed_total).epsilon(1e-9));
}

TEST_CASE("pedestrian actors have a zero box term; stop has only the class term") {
  auto mp = build_model<double>(tiny_cfg(), 23);
  const Scene s = small_scene();
  nn::Tape<double> tape;
  const PassResult pass = scene_pass(tape, s, mp, PassOptions{});
  const auto ordered = canonical_order(s.actors);
  for (std::size_t i = 0; i < ordered.size(); ++i) {
    if (ordered[i].cls == ActorClass::kPedestrian) {
      CHECK(pass.terms[i].box() == 0.0);
      CHECK(pass.terms[i].velocity != 0.0);
    }
  }
  const ActorTerms& stop = pass.terms.back();
  CHECK(stop.is_stop);
  CHECK(stop.loc == 0.0);
  CHECK(stop.box() == 0.0);
  CHECK(stop.velocity == 0.0);
  CHECK(stop.total() == stop.cls);
}

TEST_CASE("empty scene NLL equals the first-step stop term") {
  auto mp = build_model<double>(tiny_cfg(), 29);
  Scene s;
  s.region_m = 8.0;
  s.map = small_map();
  s.sdv.actor = make_vehicle({0, 0}, 1.0, 2.0, 0.0);
  const double nll = scene_nll(s, mp);

  const auto mg = map_gates_value(mp, s.map);
  StepEvaluator<double> eval(mp, &mg,
                             to_tensor<double>(rasterize_actors(s.sdv, {}, mp.cfg.raster)),
                             nullptr);
  const double stop_p = eval.class_probs()[static_cast<int>(ActorClass::kStop)];
  CHECK(nll == doctest::Approx(-std::log(stop_p)).epsilon(1e-9));
}

TEST_CASE("scene NLL equals the sum of decomposed per-actor totals") {
  auto mp = build_model<double>(tiny_cfg(), 31);
  Rng rng(5);
  for (int trial = 0; trial < 5; ++trial) {
    Scene s;
    s.region_m = 8.0;
    s.map = small_map();
    s.sdv.actor = make_vehicle({0, 0}, 1.0, 2.0, 0.0, 2.0, 0.0);
    const int n = 1 + static_cast<int>(rng.below(5));
    for (int i = 0; i < n; ++i) {
      const Vec2 p{rng.uniform(-7.5, 7.5), rng.uniform(-7.5, 7.5)};
      switch (rng.below(3)) {
        case 0: s.actors.push_back(make_vehicle(p, 1.0, 2.0, rng.angle(), 3.0, rng.angle())); break;
        case 1: s.actors.push_back(make_pedestrian(p, 1.0, rng.angle())); break;
        default: s.actors.push_back(make_bicyclist(p, 0.6, 1.7, rng.angle(), 2.0, rng.angle()));
      }
    }
    const PassResult r = scene_nll_breakdown(s, mp);
    double total = 0.0;
    for (const auto& t : r.terms) total += t.total();
    CHECK(r.total == doctest::Approx(total).epsilon(1e-9));
    CHECK(r.total == doctest::Approx(scene_nll(s, mp)).epsilon(1e-9));
  }
}

TEST_CASE("velocity direction is heading-relative for boxed classes, absolute for pedestrians") {
  auto mp = build_model<double>(tiny_cfg(), 37);
  // Rig the direction heads: mean offset 0 with high concentration, and the
  // moving component certain.
  for (const char* cls : {"vehicle", "pedestrian", "bicyclist"}) {
    for (const char* head : {"vel_d", "vel_w", "vel_s"}) {
      for (const char* layer : {"l1", "l2", "l3"}) {
        mp.reg.at(std::string(head) + "." + cls + "." + layer + ".w").value.fill(0.0);
        mp.reg.at(std::string(head) + "." + cls + "." + layer + ".b").value.fill(0.0);
      }
    }
    auto& dbias = mp.reg.at(std::string("vel_d.") + cls + ".l3.b").value;
    dbias.data[0] = 1.0;  // biternion cos
    dbias.data[1] = 0.0;  // biternion sin
    dbias.data[2] = 3.0;  // log kappa ~ 20
    auto& wbias = mp.reg.at(std::string("vel_w.") + cls + ".l3.b").value;
    wbias.data[0] = -10.0;  // zero-velocity component off
    wbias.data[1] = 10.0;
    auto& sbias = mp.reg.at(std::string("vel_s.") + cls + ".l3.b").value;
    sbias.data[0] = 1.0;  // mu_s
    sbias.data[1] = 0.0;  // log sigma_s
  }

  auto velocity_term = [&](const Actor& a) {
    Scene s;
    s.region_m = 8.0;
    s.map = small_map();
    s.sdv.actor = make_vehicle({0, 0}, 1.0, 2.0, 0.0);
    s.actors = {a};
    nn::Tape<double> tape;
    return scene_pass(tape, s, mp, PassOptions{}).terms[0].velocity;
  };

  // Vehicle heading 1.0: direction == heading (offset 0) must beat an offset.
  const double aligned =
      velocity_term(make_vehicle({2, 1}, 1.0, 2.0, 1.0, 3.0, 1.0));
  const double offset = velocity_term(make_vehicle({2, 1}, 1.0, 2.0, 1.0, 3.0, 1.6));
  CHECK(aligned < offset);  // smaller NLL when the offset is zero

  // Pedestrian: absolute direction 0 must beat direction 0.6.
  const double ped_zero = velocity_term(make_pedestrian({2, 1}, 1.5, 0.0));
  const double ped_off = velocity_term(make_pedestrian({2, 1}, 1.5, 0.6));
  CHECK(ped_zero < ped_off);

  // And the vehicle's absolute direction 0 with heading 1.0 is an offset of
  // -1.0, so it should NOT look like the pedestrian's absolute-zero case.
  const double veh_abs_zero = velocity_term(make_vehicle({2, 1}, 1.0, 2.0, 1.0, 3.0, 0.0));
  CHECK(aligned < veh_abs_zero);
}

TEST_CASE("bptt truncation drops the stop term") {
  auto mp = build_model<double>(tiny_cfg(), 41);
  Scene s = small_scene();
  nn::Tape<double> t1;
  PassOptions opt;
  opt.max_steps = 2;
  const PassResult truncated = scene_pass(t1, s, mp, opt);
  CHECK(truncated.terms.size() == 2);
  CHECK_FALSE(truncated.terms.back().is_stop);

  nn::Tape<double> t2;
  const PassResult full = scene_pass(t2, s, mp, PassOptions{});
  CHECK(full.terms.size() == 4);
  CHECK(full.terms.back().is_stop);
  // Shared prefix terms agree.
  CHECK(truncated.terms[0].total() == doctest::Approx(full.terms[0].total()).epsilon(1e-9));
  CHECK(truncated.terms[1].total() == doctest::Approx(full.terms[1].total()).epsilon(1e-9));
}

TEST_CASE("scene with mismatched region is rejected") {
  auto mp = build_model<double>(tiny_cfg(), 43);
  Scene s = small_scene();
  s.region_m = 40.0;
  nn::Tape<double> tape;
  CHECK_THROWS_AS(scene_pass(tape, s, mp, PassOptions{}), std::invalid_argument);
}

TEST_CASE("whole-network gradients match finite differences") {
  ModelConfig cfg = tiny_cfg();
  auto mp = build_model<double>(cfg, 47);
  Rng rng(3);
  // Zero-initialized biases park ReLU pre-activations exactly on the kink,
  // where the subgradient and a straddling central difference disagree;
  // randomizing every parameter keeps the check well-posed.
  for (int pi = 0; pi < mp.reg.count(); ++pi)
    for (double& v : mp.reg[pi].value.data) v = rng.uniform(-0.4, 0.4);
  nn::Tensor<double> x({cfg.in_channels(), 16, 16});
  for (double& v : x.data) v = rng.uniform(-1, 1);

  // Scalar loss summing every head output: class logits, all location grids,
  // box/heading raws for both boxed classes, velocity raws for all classes.
  auto build = [&](nn::Tape<double>& t) {
    const auto sv = model_step(t, mp, t.constant(x), -1, nn::ConvLstmState{});
    std::vector<int> sums = {t.sum_all(sv.class_logits)};
    for (ActorClass cls : {ActorClass::kVehicle, ActorClass::kPedestrian, ActorClass::kBicyclist}) {
      sums.push_back(t.sum_all(loc_logits(t, mp, sv.f, cls)));
      sums.push_back(t.sum_all(velocity_raw(t, mp, sv.f, 7, 9, cls)));
    }
    for (ActorClass cls : {ActorClass::kVehicle, ActorClass::kBicyclist}) {
      sums.push_back(t.sum_all(box_raw(t, mp, sv.f, 7, 9, cls)));
      sums.push_back(t.sum_all(heading_raw(t, mp, sv.f, 7, 9, cls)));
    }
    return t.sum_scalars(sums);
  };

  mp.reg.zero_grads();
  {
    nn::Tape<double> t;
    t.backward(build(t));
  }
  auto eval = [&]() {
    nn::Tape<double> t;
    return t.val(build(t)).data[0];
  };

  int checked = 0, worst_name_checked = 0;
  (void)worst_name_checked;
  for (int pi = 0; pi < mp.reg.count(); ++pi) {
    auto& p = mp.reg[pi];
    // Every parameter tensor is checked; large tensors on a strided subset.
    const std::size_t n = p.value.data.size();
    const std::size_t stride = n > 64 ? n / 37 : 1;
    for (std::size_t i = 0; i < n; i += stride) {
      const double keep = p.value.data[i];
      const double h = 1e-6;
      p.value.data[i] = keep + h;
      const double up = eval();
      p.value.data[i] = keep - h;
      const double dn = eval();
      p.value.data[i] = keep;
      const double fd = (up - dn) / (2 * h);
      CHECK(rel_err(p.grad.data[i], fd) < 1e-3);
      ++checked;
    }
  }
  CHECK(checked > 400);
}

TEST_CASE("forward activations stay finite across random scenes") {
  auto mp = build_model<double>(tiny_cfg(), 53);
  Rng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    Scene s;
    s.region_m = 8.0;
    s.map = small_map();
    s.sdv.actor = make_vehicle({0, 0}, 1.0, 2.0, 0.0, rng.uniform(0, 5), 0.0);
    const int n = static_cast<int>(rng.below(4));
    for (int i = 0; i < n; ++i)
      s.actors.push_back(make_pedestrian({rng.uniform(-7, 7), rng.uniform(-7, 7)},
                                         rng.uniform(0.1, 2), rng.angle()));
    const double nll = scene_nll(s, mp);
    CHECK(std::isfinite(nll));
  }
}
