#pragma once

#include <optional>

#include "scenegen/nn/params.hpp"
#include "scenegen/nn/tape.hpp"

namespace scenegen::nn {

// Parameter handles for one ConvLSTM layer: input conv, recurrent conv, gate
// bias. Gate order along the channel axis is (input, forget, candidate,
// output), each `hidden` channels wide.
template <typename S>
struct ConvLstmLayer {
  Param<S>* wx = nullptr;  // [4H, x_channels_total, k, k]
  Param<S>* wh = nullptr;  // [4H, H, k, k]
  Param<S>* b = nullptr;   // [4H]
};

template <typename S>
struct ConvLstmParams {
  ConvLstmLayer<S> layer1;
  ConvLstmLayer<S> layer2;
  int hidden = 32;
  int kernel = 5;
};

// Hidden/cell vars of both stacked layers; -1 means the zero initial state.
struct ConvLstmState {
  int h1 = -1, c1 = -1, h2 = -1, c2 = -1;
};

namespace detail {

// Applies the gate non-linearities to a [4H, h, w] pre-activation plus the
// previous cell; returns (h, c). The non-peephole form.
template <typename S>
std::pair<int, int> lstm_cell(Tape<S>& t, int gates_pre, int hidden, int c_prev) {
  using Var = typename Tape<S>::Var;
  const Var gi = t.sigmoid(t.slice_ch(gates_pre, 0, hidden));
  const Var gf = t.sigmoid(t.slice_ch(gates_pre, hidden, 2 * hidden));
  const Var gg = t.tanh_(t.slice_ch(gates_pre, 2 * hidden, 3 * hidden));
  const Var go = t.sigmoid(t.slice_ch(gates_pre, 3 * hidden, 4 * hidden));
  Var c = t.mul(gi, gg);
  if (c_prev >= 0) c = t.add(t.mul(gf, c_prev), c);
  const Var h = t.mul(go, t.tanh_(c));
  return {h, c};
}

}  // namespace detail

// One step of the two-layer ConvLSTM. `x` is the input image; `x_gates_extra`,
// when given, is a precomputed contribution added to layer 1's gate
// pre-activation (used to cache the conv over input channels that stay
// constant across steps), with `x_w_offset` locating x's channels inside the
// layer-1 input-conv weight tensor.
template <typename S>
ConvLstmState conv_lstm_step(Tape<S>& t, int x, const ConvLstmState& prev,
                             const ConvLstmParams<S>& p, int x_gates_extra = -1,
                             int x_w_offset = 0) {
  using Var = typename Tape<S>::Var;
  const Var wx1 = t.leaf(&p.layer1.wx->value, &p.layer1.wx->grad);
  const Var wh1 = t.leaf(&p.layer1.wh->value, &p.layer1.wh->grad);
  const Var b1 = t.leaf(&p.layer1.b->value, &p.layer1.b->grad);
  Var pre1 = t.conv2d(x, wx1, b1, p.kernel, x_w_offset);
  if (x_gates_extra >= 0) pre1 = t.add(pre1, x_gates_extra);
  if (prev.h1 >= 0) pre1 = t.add(pre1, t.conv2d(prev.h1, wh1, -1, p.kernel));
  auto [h1, c1] = detail::lstm_cell(t, pre1, p.hidden, prev.c1);

  const Var wx2 = t.leaf(&p.layer2.wx->value, &p.layer2.wx->grad);
  const Var wh2 = t.leaf(&p.layer2.wh->value, &p.layer2.wh->grad);
  const Var b2 = t.leaf(&p.layer2.b->value, &p.layer2.b->grad);
  Var pre2 = t.conv2d(h1, wx2, b2, p.kernel);
  if (prev.h2 >= 0) pre2 = t.add(pre2, t.conv2d(prev.h2, wh2, -1, p.kernel));
  auto [h2, c2] = detail::lstm_cell(t, pre2, p.hidden, prev.c2);

  return ConvLstmState{h1, c1, h2, c2};
}

// Three-layer MLP: two ReLU hidden layers, raw (untransformed) output.
template <typename S>
struct Mlp3 {
  Param<S>*w1, *b1, *w2, *b2, *w3, *b3;
};

template <typename S>
int mlp3(Tape<S>& t, int x, const Mlp3<S>& m) {
  using Var = typename Tape<S>::Var;
  auto lin = [&](Var in, Param<S>* w, Param<S>* b) {
    return t.linear(in, t.leaf(&w->value, &w->grad), t.leaf(&b->value, &b->grad));
  };
  Var h = t.relu(lin(x, m.w1, m.b1));
  h = t.relu(lin(h, m.w2, m.b2));
  return lin(h, m.w3, m.b3);
}

}  // namespace scenegen::nn
