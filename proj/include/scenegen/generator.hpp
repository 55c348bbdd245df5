#pragma once

#include <optional>

#include "scenegen/model.hpp"

namespace scenegen {

struct SamplerConfig {
  int proposals = 10;               // M
  int max_actors = 25;
  int max_rejections_per_actor = 20;
  std::uint64_t seed = 0;

  void validate() const {
    if (proposals < 1) throw std::invalid_argument("SamplerConfig: proposals must be >= 1");
    if (max_actors < 1) throw std::invalid_argument("SamplerConfig: max_actors must be >= 1");
    if (max_rejections_per_actor < 0)
      throw std::invalid_argument("SamplerConfig: max_rejections must be >= 0");
  }
};

// Sampling diagnostics; also carries the M-proposal instrumentation used by
// the sampling-strategy analysis.
struct GenStats {
  int steps = 0;
  int placed = 0;
  int skipped = 0;
  int rejections = 0;
  int mask_fallbacks = 0;
  bool stopped_by_token = false;
  bool kept_is_max = true;  // every kept proposal had the max density among its M draws
  double kept_loc_logp_sum = 0.0;
  double kept_heading_logp_sum = 0.0;
  double kept_velocity_logp_sum = 0.0;

  // Mean per-actor log density of kept proposals over the M-sampled heads.
  double mean_kept_logp() const {
    if (placed == 0) return 0.0;
    return (kept_loc_logp_sum + kept_heading_logp_sum + kept_velocity_logp_sum) / placed;
  }
};

// Bins allowed by the canonical ordering given the last placed actor: columns
// strictly to the right, or the same column at the same row or above
// (row >= last row). All bins are allowed when nothing is placed yet.
inline std::vector<std::uint8_t> ordering_mask(const std::optional<Actor>& last,
                                               const RasterConfig& cfg) {
  const int n = cfg.grid();
  std::vector<std::uint8_t> mask(std::size_t(n) * n, 1);
  if (!last) return mask;
  const int lc = cfg.col_of(last->pos.x);
  const int lr = cfg.row_of(last->pos.y);
  for (int r = 0; r < n; ++r) {
    std::uint8_t* row = mask.data() + std::size_t(r) * n;
    for (int c = 0; c < n; ++c) row[c] = c > lc || (c == lc && r >= lr) ? 1 : 0;
  }
  return mask;
}

// ---------------------------------------------------------------------------
// Values-only forward evaluation of one generation step (fresh tape per step;
// recurrent state carried as plain tensors).

template <typename S>
struct StepStateValues {
  nn::Tensor<S> h1, c1, h2, c2;
  bool valid = false;
};

template <typename S>
class StepEvaluator {
 public:
  StepEvaluator(ModelParams<S>& mp, const nn::Tensor<S>* map_gates, nn::Tensor<S> actor_img,
                const StepStateValues<S>* prev)
      : mp_(mp) {
    const int x = tape_.constant(std::move(actor_img));
    const int mg = tape_.constant_ref(map_gates);
    nn::ConvLstmState prev_state;
    if (prev != nullptr && prev->valid) {
      prev_state.h1 = tape_.constant_ref(&prev->h1);
      prev_state.c1 = tape_.constant_ref(&prev->c1);
      prev_state.h2 = tape_.constant_ref(&prev->h2);
      prev_state.c2 = tape_.constant_ref(&prev->c2);
    }
    step_ = model_step(tape_, mp_, x, mg, prev_state);
  }

  std::vector<double> class_probs() {
    const auto& logits = tape_.val(step_.class_logits);
    std::vector<double> l(logits.data.begin(), logits.data.end());
    return softmax(l);
  }

  QuantizedLocationParams location(ActorClass cls) {
    const RasterConfig& rc = mp_.cfg.raster;
    const int n = rc.grid();
    const auto& logits = tape_.val(loc_logits(tape_, mp_, step_.f, cls));
    std::vector<double> l(logits.data.begin(), logits.data.end());
    return location_from_probs(softmax(l), n, n, rc.region_m, rc.resolution_m);
  }

  LogNormal2MixtureParams box(ActorClass cls, int row, int col) {
    const auto& raw = tape_.val(box_raw(tape_, mp_, step_.f, row, col, cls));
    std::vector<double> r(raw.data.begin(), raw.data.end());
    return lognormal2_from_raw(r, mp_.cfg.mixture_k);
  }

  VonMisesMixtureParams heading(ActorClass cls, int row, int col) {
    const auto& raw = tape_.val(heading_raw(tape_, mp_, step_.f, row, col, cls));
    std::vector<double> r(raw.data.begin(), raw.data.end());
    return vm_mixture_from_raw(r, mp_.cfg.mixture_k);
  }

  VelocityMixtureParams velocity(ActorClass cls, int row, int col) {
    const auto& raw = tape_.val(velocity_raw(tape_, mp_, step_.f, row, col, cls));
    std::vector<double> r(raw.data.begin(), raw.data.end());
    return velocity_from_raw(r, mp_.cfg.velocity_k());
  }

  std::vector<double> pooled_features() {
    const auto& fv = tape_.val(tape_.avg_pool(step_.f));
    return std::vector<double>(fv.data.begin(), fv.data.end());
  }

  StepStateValues<S> state() {
    StepStateValues<S> out;
    out.h1 = tape_.val(step_.state.h1);
    out.c1 = tape_.val(step_.state.c1);
    out.h2 = tape_.val(step_.state.h2);
    out.c2 = tape_.val(step_.state.c2);
    out.valid = true;
    return out;
  }

 private:
  nn::Tape<S> tape_;
  ModelParams<S>& mp_;
  StepVars<S> step_;
};

// Layer-1 gate pre-activation of the map channels, computed once per scene.
template <typename S>
nn::Tensor<S> map_gates_value(ModelParams<S>& mp, const HDMap& map) {
  nn::Tape<S> tape;
  const int mi = tape.constant(to_tensor<S>(rasterize_map(map, mp.cfg.raster)));
  return tape.val(map_gate_cache(tape, mp, mi));
}

namespace detail {

// Draws `proposals` times, keeps the draw with the highest log density, and
// verifies the kept density is the max of the candidates (instrumentation).
template <typename Draw, typename DrawFn, typename LogpFn>
std::pair<Draw, double> m_proposal(int proposals, Rng& rng, DrawFn&& draw_fn, LogpFn&& logp_fn,
                                   bool& kept_is_max) {
  Draw best{};
  double best_lp = -std::numeric_limits<double>::infinity();
  std::vector<double> candidates;
  candidates.reserve(proposals);
  for (int m = 0; m < proposals; ++m) {
    Draw d = draw_fn(rng);
    const double lp = logp_fn(d);
    candidates.push_back(lp);
    if (m == 0 || lp > best_lp) {
      best = d;
      best_lp = lp;
    }
  }
  for (double lp : candidates)
    if (lp > best_lp) kept_is_max = false;
  return {best, best_lp};
}

}  // namespace detail

// Samples a full traffic scene conditioned on the map and SDV state.
//
// Per step: draw the class once; on stop, finish. Otherwise sample location,
// heading, and velocity with M proposals each (keeping the most likely draw);
// box size uses a single draw. Location bins that precede the last placed
// actor in canonical order are masked out; a degenerate mask falls back to
// the unmasked grid and bumps a counter. Vehicles and bicyclists whose boxes
// collide with any placed box (including the SDV's) restart the whole actor
// draw, up to max_rejections, after which the step is skipped with the state
// advanced. Generation terminates within max_actors steps.
template <typename S>
Scene generate_scene(const HDMap& map, const SDVState& sdv, ModelParams<S>& mp,
                     const SamplerConfig& cfg, GenStats* stats_out = nullptr) {
  cfg.validate();
  const RasterConfig& rc = mp.cfg.raster;
  Rng rng(cfg.seed);
  GenStats stats;

  Scene scene;
  scene.sdv = sdv;
  scene.map = map;
  scene.region_m = rc.region_m;

  const nn::Tensor<S> map_gates = map_gates_value(mp, map);
  StepStateValues<S> state;
  std::optional<Actor> last_placed;

  bool stop = false;
  for (int step = 0; step < cfg.max_actors && !stop; ++step) {
    stats.steps += 1;
    StepEvaluator<S> eval(mp, &map_gates, to_tensor<S>(rasterize_actors(sdv, scene.actors, rc)),
                          state.valid ? &state : nullptr);

    bool placed_this_step = false;
    for (int attempt = 0; attempt <= cfg.max_rejections_per_actor; ++attempt) {
      // A rejected draw restarts the full actor draw, class included; a stop
      // drawn on a retry ends the scene.
      const auto probs = eval.class_probs();
      const int cls_idx = categorical_sample(probs, rng);
      if (cls_idx == static_cast<int>(ActorClass::kStop)) {
        stop = true;
        stats.stopped_by_token = true;
        break;
      }
      const ActorClass cls = static_cast<ActorClass>(cls_idx);

      QuantizedLocationParams loc = eval.location(cls);
      const auto mask = ordering_mask(last_placed, rc);
      try {
        loc = mask_and_renormalize(loc, mask);
      } catch (const DegenerateMaskError&) {
        stats.mask_fallbacks += 1;  // fall back to the unmasked grid
      }
      const auto [bin, loc_logp] = detail::m_proposal<int>(
          cfg.proposals, rng, [&](Rng& r) { return loc.sample_bin(r); },
          [&](int b) {
            return std::log(loc.probs[b]) - 2.0 * std::log(rc.resolution_m);
          },
          stats.kept_is_max);
      const int row = bin / loc.cols, col = bin % loc.cols;

      // Continuous position inside the kept bin; within the last actor's
      // column the draw is truncated so the canonical order stays strict.
      double lo_x = -rc.region_m + col * rc.resolution_m;
      double lo_y = -rc.region_m + row * rc.resolution_m;
      const double hi_x = lo_x + rc.resolution_m;
      const double hi_y = lo_y + rc.resolution_m;
      if (last_placed && rc.col_of(last_placed->pos.x) == col) {
        lo_x = std::max(lo_x, last_placed->pos.x);
        if (rc.row_of(last_placed->pos.y) == row) lo_y = std::max(lo_y, last_placed->pos.y);
      }
      const Vec2 pos{rng.uniform(lo_x, hi_x), rng.uniform(lo_y, hi_y)};

      Actor actor;
      double heading_logp = 0.0;
      if (class_has_box(cls)) {
        const auto sizes = eval.box(cls, row, col).sample(rng);
        const VonMisesMixtureParams hp = eval.heading(cls, row, col);
        const auto [theta, hlp] = detail::m_proposal<double>(
            cfg.proposals, rng, [&](Rng& r) { return hp.sample(r); },
            [&](double t) { return hp.log_prob(t); }, stats.kept_is_max);
        heading_logp = hlp;
        const VelocityMixtureParams vp = eval.velocity(cls, row, col);
        const auto [vel, vlp] = detail::m_proposal<std::pair<double, double>>(
            cfg.proposals, rng, [&](Rng& r) { return vp.sample(r); },
            [&](const std::pair<double, double>& v) { return vp.log_prob(v.first, v.second); },
            stats.kept_is_max);
        const auto [speed, omega] = vel;
        const double direction = speed > 0.0 ? wrap_angle(theta + omega) : 0.0;
        actor = Actor{cls, pos, OrientedBox{sizes.first, sizes.second, wrap_angle(theta)},
                      speed, direction};

        bool collides = boxes_collide(actor, sdv.actor);
        for (const Actor& other : scene.actors) {
          if (collides) break;
          if (other.box) collides = boxes_collide(actor, other);
        }
        if (collides) {
          stats.rejections += 1;
          continue;
        }
        stats.kept_velocity_logp_sum += vlp;
      } else {
        const VelocityMixtureParams vp = eval.velocity(cls, row, col);
        const auto [vel, vlp] = detail::m_proposal<std::pair<double, double>>(
            cfg.proposals, rng, [&](Rng& r) { return vp.sample(r); },
            [&](const std::pair<double, double>& v) { return vp.log_prob(v.first, v.second); },
            stats.kept_is_max);
        const auto [speed, omega] = vel;
        actor = Actor{cls, pos, std::nullopt, speed, speed > 0.0 ? omega : 0.0};
        stats.kept_velocity_logp_sum += vlp;
      }

      stats.kept_loc_logp_sum += loc_logp;
      stats.kept_heading_logp_sum += heading_logp;
      scene.actors.push_back(actor);
      last_placed = actor;
      stats.placed += 1;
      placed_this_step = true;
      break;
    }

    if (!stop) {
      if (!placed_this_step) stats.skipped += 1;
      state = eval.state();
    }
  }

  if (stats_out != nullptr) *stats_out = stats;
  return scene;
}

}  // namespace scenegen
