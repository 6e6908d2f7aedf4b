#pragma once

#include "dforge/ops.hpp"
#include "dforge/rng.hpp"
#include "dforge/tensor.hpp"

#include <cmath>
#include <functional>
#include <vector>

namespace dforge::testing {

using ad::Tensor;

inline Tensor random_tensor(std::vector<int> shape, Rng& rng, double lo = -1.0,
                            double hi = 1.0) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (int i = 0; i < t.numel(); ++i) t.data()[i] = rng.uniform(lo, hi);
  return t;
}

// Central finite-difference check of d(loss)/d(inputs) against the recorded
// graph. `loss_fn` must recompute the scalar loss from the inputs' current
// values on every call. Returns the max elementwise error relative to
// max(1, |analytic|, |numeric|).
inline double gradcheck(const std::function<Tensor()>& loss_fn,
                        std::vector<Tensor> inputs, double h = 1e-5) {
  for (Tensor& t : inputs) {
    t.set_trainable(true);
    t.zero_grad();
  }
  std::vector<std::vector<double>> analytic;
  {
    ad::Tape tape;
    Tensor loss = loss_fn();
    tape.backward(loss);
    for (Tensor& t : inputs) analytic.push_back(t.grad());
  }
  double worst = 0.0;
  for (size_t k = 0; k < inputs.size(); ++k) {
    Tensor& t = inputs[k];
    for (int i = 0; i < t.numel(); ++i) {
      const double saved = t.data()[i];
      t.data()[i] = saved + h;
      const double up = loss_fn().item();
      t.data()[i] = saved - h;
      const double down = loss_fn().item();
      t.data()[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[k][static_cast<size_t>(i)];
      const double err =
          std::fabs(a - numeric) / std::max({1.0, std::fabs(a), std::fabs(numeric)});
      worst = std::max(worst, err);
    }
  }
  for (Tensor& t : inputs) {
    t.set_trainable(false);
    t.zero_grad();
  }
  return worst;
}

}  // namespace dforge::testing
