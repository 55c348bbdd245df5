#pragma once

#include <array>
#include <limits>
#include <numeric>
#include <optional>
#include <string>

#include "scenegen/distributions.hpp"
#include "scenegen/nn/layers.hpp"
#include "scenegen/nn/params.hpp"
#include "scenegen/nn/tape.hpp"
#include "scenegen/raster.hpp"
#include "scenegen/scene.hpp"

namespace scenegen {

// Architecture hyperparameters. Defaults follow the reference architecture
// (5x5 ConvLSTM with 32 hidden channels, five 3x3 backbone layers, 32-wide
// MLPs, K = 10 mixture components, 320x320 raster); desk-scale profiles
// shrink the raster and channel widths.
struct ModelConfig {
  RasterConfig raster{40.0, 0.25, false};
  int lstm_channels = 32;
  int backbone_channels = 32;
  int loc_channels = 32;
  int mlp_hidden = 32;
  int mixture_k = 10;
  int lstm_kernel = 5;
  int conv_kernel = 3;
  int gn_groups = 8;

  int map_channels() const { return map_channel_count(raster); }
  static constexpr int actor_channels() { return actor_ch::kCount; }
  int in_channels() const { return map_channels() + actor_channels(); }
  // The velocity mixture needs the zero-velocity component plus at least one
  // moving component, so it never drops below 2.
  int velocity_k() const { return std::max(2, mixture_k); }
  int groups_for(int channels) const { return std::gcd(gn_groups, channels); }

  bool operator==(const ModelConfig&) const = default;
};

inline int boxed_head_index(ActorClass c) {
  if (c == ActorClass::kVehicle) return 0;
  if (c == ActorClass::kBicyclist) return 1;
  throw std::invalid_argument("boxed_head_index: class has no box head");
}

// All learnable weights, registered by name in a closed registry.
template <typename S>
struct ModelParams {
  ModelConfig cfg;
  nn::ParamRegistry<S> reg;

  nn::ConvLstmParams<S> lstm;
  struct ConvGn {
    nn::Param<S>* w = nullptr;
    nn::Param<S>* gamma = nullptr;
    nn::Param<S>* beta = nullptr;
  };
  std::array<ConvGn, 5> backbone;
  nn::Mlp3<S> class_mlp;
  struct LocHead {
    ConvGn c1, c2;
    nn::Param<S>* out_w = nullptr;
    nn::Param<S>* out_b = nullptr;
  };
  std::array<LocHead, 3> loc;                 // per placeable class
  std::array<nn::Mlp3<S>, 2> box_mlp;         // vehicle, bicyclist
  std::array<nn::Mlp3<S>, 2> heading_mlp;     // vehicle, bicyclist
  std::array<nn::Mlp3<S>, 3> vel_weight_mlp;  // per class
  std::array<nn::Mlp3<S>, 3> speed_mlp;       // per class
  std::array<nn::Mlp3<S>, 3> dir_mlp;         // per class
};

namespace detail {

template <typename S>
nn::Mlp3<S> make_mlp(nn::ParamRegistry<S>& reg, const std::string& prefix, int in, int hidden,
                     int out, Rng& rng) {
  nn::Mlp3<S> m;
  m.w1 = &reg.add(prefix + ".l1.w", {hidden, in});
  m.b1 = &reg.add(prefix + ".l1.b", {hidden});
  m.w2 = &reg.add(prefix + ".l2.w", {hidden, hidden});
  m.b2 = &reg.add(prefix + ".l2.b", {hidden});
  m.w3 = &reg.add(prefix + ".l3.w", {out, hidden});
  m.b3 = &reg.add(prefix + ".l3.b", {out});
  nn::init_kaiming_uniform(m.w1->value, in, rng);
  nn::init_kaiming_uniform(m.w2->value, hidden, rng);
  nn::init_kaiming_uniform(m.w3->value, hidden, rng);
  return m;
}

}  // namespace detail

// Builds and initializes the full parameter set: Kaiming-uniform feedforward
// kernels, orthogonal recurrent kernels, zero biases with forget gate +1.
template <typename S>
ModelParams<S> build_model(const ModelConfig& cfg, std::uint64_t seed) {
  ModelParams<S> mp;
  mp.cfg = cfg;
  Rng rng(derive_seed(seed, 0x6d6f64656cULL));
  auto& reg = mp.reg;

  const int hidden = cfg.lstm_channels;
  const int k = cfg.lstm_kernel;
  const int cin = cfg.in_channels();
  mp.lstm.hidden = hidden;
  mp.lstm.kernel = k;
  auto init_lstm_layer = [&](nn::ConvLstmLayer<S>& layer, const std::string& prefix, int xc) {
    layer.wx = &reg.add(prefix + ".wx", {4 * hidden, xc, k, k});
    layer.wh = &reg.add(prefix + ".wh", {4 * hidden, hidden, k, k});
    layer.b = &reg.add(prefix + ".b", {4 * hidden});
    nn::init_kaiming_uniform(layer.wx->value, xc * k * k, rng);
    nn::init_orthogonal_rows(layer.wh->value, 4 * hidden, hidden * k * k, rng);
    for (int i = hidden; i < 2 * hidden; ++i) layer.b->value.data[i] = S(1);  // forget gate
  };
  init_lstm_layer(mp.lstm.layer1, "lstm1", cin);
  init_lstm_layer(mp.lstm.layer2, "lstm2", hidden);

  const int bb = cfg.backbone_channels;
  int prev = hidden;
  for (int layer = 0; layer < 5; ++layer) {
    const std::string prefix = "backbone.conv" + std::to_string(layer + 1);
    auto& cg = mp.backbone[layer];
    cg.w = &reg.add(prefix + ".w", {bb, prev, cfg.conv_kernel, cfg.conv_kernel});
    cg.gamma = &reg.add(prefix + ".gamma", {bb});
    cg.beta = &reg.add(prefix + ".beta", {bb});
    nn::init_kaiming_uniform(cg.w->value, prev * cfg.conv_kernel * cfg.conv_kernel, rng);
    cg.gamma->value.fill(S(1));
    prev = bb;
  }

  mp.class_mlp = detail::make_mlp(reg, "class_mlp", bb, cfg.mlp_hidden, kNumClassLabels, rng);

  const char* class_names[3] = {"vehicle", "pedestrian", "bicyclist"};
  for (int c = 0; c < 3; ++c) {
    const std::string prefix = std::string("loc.") + class_names[c];
    auto& head = mp.loc[c];
    auto conv_gn = [&](typename ModelParams<S>::ConvGn& cg, const std::string& p, int in_ch) {
      cg.w = &reg.add(p + ".w", {cfg.loc_channels, in_ch, cfg.conv_kernel, cfg.conv_kernel});
      cg.gamma = &reg.add(p + ".gamma", {cfg.loc_channels});
      cg.beta = &reg.add(p + ".beta", {cfg.loc_channels});
      nn::init_kaiming_uniform(cg.w->value, in_ch * cfg.conv_kernel * cfg.conv_kernel, rng);
      cg.gamma->value.fill(S(1));
    };
    conv_gn(head.c1, prefix + ".conv1", bb);
    conv_gn(head.c2, prefix + ".conv2", cfg.loc_channels);
    head.out_w = &reg.add(prefix + ".out.w", {1, cfg.loc_channels, 1, 1});
    head.out_b = &reg.add(prefix + ".out.b", {1});
    nn::init_kaiming_uniform(head.out_w->value, cfg.loc_channels, rng);
  }

  const int kmix = cfg.mixture_k;
  const int kv = cfg.velocity_k();
  for (int b = 0; b < 2; ++b) {
    const char* name = b == 0 ? "vehicle" : "bicyclist";
    mp.box_mlp[b] = detail::make_mlp(reg, std::string("box.") + name, bb, cfg.mlp_hidden,
                                     lognormal2_raw_size(kmix), rng);
    mp.heading_mlp[b] = detail::make_mlp(reg, std::string("heading.") + name, bb, cfg.mlp_hidden,
                                         vm_mixture_raw_size(kmix), rng);
  }
  for (int c = 0; c < 3; ++c) {
    mp.vel_weight_mlp[c] = detail::make_mlp(reg, std::string("vel_w.") + class_names[c], bb,
                                            cfg.mlp_hidden, kv, rng);
    mp.speed_mlp[c] = detail::make_mlp(reg, std::string("vel_s.") + class_names[c], bb,
                                       cfg.mlp_hidden, 2 * (kv - 1), rng);
    mp.dir_mlp[c] = detail::make_mlp(reg, std::string("vel_d.") + class_names[c], bb,
                                     cfg.mlp_hidden, 3 * (kv - 1), rng);
  }
  reg.freeze();
  return mp;
}

// ---------------------------------------------------------------------------
// Forward pass pieces

template <typename S>
nn::Tensor<S> to_tensor(const RasterImage& img) {
  nn::Tensor<S> t({img.channels, img.height, img.width});
  for (std::size_t i = 0; i < img.data.size(); ++i) t.data[i] = static_cast<S>(img.data[i]);
  return t;
}

// Precomputes the layer-1 gate contribution of the map channels; reused
// across every step of a scene because the map raster never changes within
// one scene pass.
template <typename S>
int map_gate_cache(nn::Tape<S>& tape, ModelParams<S>& mp, int map_img) {
  const int wx1 = tape.leaf(&mp.lstm.layer1.wx->value, &mp.lstm.layer1.wx->grad);
  return tape.conv2d(map_img, wx1, -1, mp.cfg.lstm_kernel, 0);
}

template <typename S>
struct StepVars {
  nn::ConvLstmState state;
  int f = -1;             // backbone features [B,H,W]
  int class_logits = -1;  // [kNumClassLabels]
};

// Runs one generation step: ConvLSTM update, backbone CNN, class head.
// `x` holds the actor channels when `map_gates` is given (with the map part
// cached), or the full composed input when `map_gates` is -1.
template <typename S>
StepVars<S> model_step(nn::Tape<S>& tape, ModelParams<S>& mp, int x, int map_gates,
                       const nn::ConvLstmState& prev) {
  StepVars<S> out;
  const int offset = map_gates >= 0 ? mp.cfg.map_channels() : 0;
  out.state = nn::conv_lstm_step(tape, x, prev, mp.lstm, map_gates, offset);

  int t = out.state.h2;
  for (const auto& cg : mp.backbone) {
    const int conv = tape.conv2d(t, tape.leaf(&cg.w->value, &cg.w->grad), -1, mp.cfg.conv_kernel);
    const int norm = tape.group_norm(conv, tape.leaf(&cg.gamma->value, &cg.gamma->grad),
                                     tape.leaf(&cg.beta->value, &cg.beta->grad),
                                     mp.cfg.groups_for(mp.cfg.backbone_channels));
    t = tape.relu(norm);
  }
  out.f = t;
  out.class_logits = nn::mlp3(tape, tape.avg_pool(out.f), mp.class_mlp);
  return out;
}

// Location grid logits for one class: two 3x3 conv+GN+ReLU blocks and a 1x1
// projection; returns a [1,H,W] tensor of logits.
template <typename S>
int loc_logits(nn::Tape<S>& tape, ModelParams<S>& mp, int f, ActorClass cls) {
  const auto& head = mp.loc.at(static_cast<std::size_t>(cls));
  int t = f;
  for (const auto* cg : {&head.c1, &head.c2}) {
    const int conv = tape.conv2d(t, tape.leaf(&cg->w->value, &cg->w->grad), -1, mp.cfg.conv_kernel);
    const int norm = tape.group_norm(conv, tape.leaf(&cg->gamma->value, &cg->gamma->grad),
                                     tape.leaf(&cg->beta->value, &cg->beta->grad),
                                     mp.cfg.groups_for(mp.cfg.loc_channels));
    t = tape.relu(norm);
  }
  return tape.conv2d(t, tape.leaf(&head.out_w->value, &head.out_w->grad),
                     tape.leaf(&head.out_b->value, &head.out_b->grad), 1);
}

// Raw head outputs at a chosen bin (spatially indexed feature column).
template <typename S>
int box_raw(nn::Tape<S>& tape, ModelParams<S>& mp, int f, int row, int col, ActorClass cls) {
  return nn::mlp3(tape, tape.index_hw(f, row, col), mp.box_mlp.at(boxed_head_index(cls)));
}

template <typename S>
int heading_raw(nn::Tape<S>& tape, ModelParams<S>& mp, int f, int row, int col, ActorClass cls) {
  return nn::mlp3(tape, tape.index_hw(f, row, col), mp.heading_mlp.at(boxed_head_index(cls)));
}

template <typename S>
int velocity_raw(nn::Tape<S>& tape, ModelParams<S>& mp, int f, int row, int col, ActorClass cls) {
  const int c = static_cast<int>(cls);
  const int fv = tape.index_hw(f, row, col);
  const int w = nn::mlp3(tape, fv, mp.vel_weight_mlp.at(c));
  const int s = nn::mlp3(tape, fv, mp.speed_mlp.at(c));
  const int d = nn::mlp3(tape, fv, mp.dir_mlp.at(c));
  return tape.concat_vec({w, s, d});
}

// Direction as the velocity head sees it: vehicles and bicyclists use an
// offset relative to the actor's heading (bicycle parameterization);
// pedestrians use the absolute direction.
inline double velocity_direction_for(const Actor& a) {
  if (a.speed == 0.0) return 0.0;
  if (a.box) return wrap_angle(a.direction - a.box->heading);
  return a.direction;
}

// ---------------------------------------------------------------------------
// Teacher-forced scene pass (shared by likelihood evaluation and training)

struct ActorTerms {
  bool is_stop = false;
  double cls = 0.0;
  double loc = 0.0;
  double size = 0.0;
  double heading = 0.0;
  double velocity = 0.0;
  double box() const { return size + heading; }
  double total() const { return cls + loc + box() + velocity; }
};

struct PassOptions {
  // Softmax restricted to the top mining_k location logits (plus target);
  // values >= grid size reproduce the full cross-entropy.
  int mining_k = std::numeric_limits<int>::max();
  // Truncated-BPTT window: scenes with more actors contribute the first
  // max_steps actors and no stop term.
  int max_steps = std::numeric_limits<int>::max();
};

struct PassResult {
  int loss = -1;  // scalar var on the caller's tape
  std::vector<ActorTerms> terms;
  double total = 0.0;
  // Backbone features of the final step (set when requested): the scene
  // descriptor used by feature-space MMD.
  std::vector<double> final_features;
};

template <typename S>
PassResult scene_pass(nn::Tape<S>& tape, const Scene& scene, ModelParams<S>& mp,
                      const PassOptions& opt = {}, bool want_features = false) {
  const RasterConfig& rc = mp.cfg.raster;
  if (scene.region_m != rc.region_m)
    throw std::invalid_argument("scene_pass: scene region does not match the model raster");
  const int grid = rc.grid();

  std::vector<Actor> ordered = canonical_order(scene.actors);
  const bool truncated = static_cast<int>(ordered.size()) > opt.max_steps;
  if (truncated) ordered.resize(opt.max_steps);
  const int steps = static_cast<int>(ordered.size()) + (truncated ? 0 : 1);

  const int map_img = tape.constant(to_tensor<S>(rasterize_map(scene.map, rc)));
  const int map_gates = map_gate_cache(tape, mp, map_img);

  PassResult out;
  std::vector<int> loss_terms;
  nn::ConvLstmState state;
  std::vector<Actor> placed;
  placed.reserve(ordered.size());

  for (int i = 0; i < steps; ++i) {
    const int x = tape.constant(to_tensor<S>(rasterize_actors(scene.sdv, placed, rc)));
    const StepVars<S> step = model_step(tape, mp, x, map_gates, state);
    state = step.state;

    ActorTerms terms;
    const bool is_stop = i == static_cast<int>(ordered.size());
    if (is_stop) {
      terms.is_stop = true;
      const int cls_nll = tape.nll_categorical(step.class_logits, static_cast<int>(ActorClass::kStop));
      terms.cls = tape.val(cls_nll).data[0];
      loss_terms.push_back(cls_nll);
    } else {
      const Actor& a = ordered[i];
      if (!rc.in_region(a.pos.x, a.pos.y))
        throw std::invalid_argument("scene_pass: actor outside the raster region");
      const int row = rc.row_of(a.pos.y), col = rc.col_of(a.pos.x);

      const int cls_nll = tape.nll_categorical(step.class_logits, static_cast<int>(a.cls));
      terms.cls = tape.val(cls_nll).data[0];
      loss_terms.push_back(cls_nll);

      const int grid_logits = loc_logits(tape, mp, step.f, a.cls);
      const int flat = row * grid + col;
      const int loc_nll = opt.mining_k >= grid * grid
                              ? tape.nll_categorical(grid_logits, flat)
                              : tape.nll_categorical_topk(grid_logits, flat, opt.mining_k);
      // Continuous density: uniform within the quantization bin.
      const double bin_log_area = 2.0 * std::log(rc.resolution_m);
      terms.loc = tape.val(loc_nll).data[0] + bin_log_area;
      loss_terms.push_back(loc_nll);

      if (a.box) {
        const int braw = box_raw(tape, mp, step.f, row, col, a.cls);
        const int bnll = tape.nll_box_size(braw, mp.cfg.mixture_k, a.box->width, a.box->length);
        terms.size = tape.val(bnll).data[0];
        loss_terms.push_back(bnll);
        const int hraw = heading_raw(tape, mp, step.f, row, col, a.cls);
        const int hnll = tape.nll_heading(hraw, mp.cfg.mixture_k, a.box->heading);
        terms.heading = tape.val(hnll).data[0];
        loss_terms.push_back(hnll);
      }

      const int vraw = velocity_raw(tape, mp, step.f, row, col, a.cls);
      const int vnll = tape.nll_velocity(vraw, mp.cfg.velocity_k(), a.speed,
                                         velocity_direction_for(a));
      terms.velocity = tape.val(vnll).data[0];
      loss_terms.push_back(vnll);

      placed.push_back(a);
    }
    out.terms.push_back(terms);
    if (want_features && i == steps - 1) {
      const auto& fv = tape.val(tape.avg_pool(step.f));
      out.final_features.assign(fv.data.begin(), fv.data.end());
    }
  }

  // The loss var carries the raw cross-entropies; the continuous-density
  // bin-area corrections are constants and do not affect gradients.
  out.loss = tape.sum_scalars(loss_terms);
  double total = 0.0;
  for (const auto& t : out.terms) total += t.total();
  out.total = total;
  return out;
}

// Negative log likelihood of a scene in nats: teacher-forced pass over the
// canonical order plus the stop token, full softmax (no mask, no mining).
template <typename S>
double scene_nll(const Scene& scene, ModelParams<S>& mp) {
  nn::Tape<S> tape;
  return scene_pass(tape, scene, mp, PassOptions{}).total;
}

// Per-actor decomposition used by the nll command and outlier mining.
template <typename S>
PassResult scene_nll_breakdown(const Scene& scene, ModelParams<S>& mp) {
  nn::Tape<S> tape;
  PassResult r = scene_pass(tape, scene, mp, PassOptions{});
  r.loss = -1;  // the tape dies with this scope
  return r;
}

}  // namespace scenegen
