#pragma once

#include "dforge/tensor.hpp"

#include <map>
#include <string>
#include <vector>

namespace dforge::ad {

struct NamedParam {
  std::string name;
  Tensor value;
};
using ParamSet = std::vector<NamedParam>;

/// Adam with weight decay folded into the gradient (g += wd * p) before the
/// moment update. Moment state is keyed by parameter name and persists
/// across steps. step() consumes and zeroes the gradients it reads.
class Adam {
 public:
  Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8,
       double weight_decay = 0.0)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), weight_decay_(weight_decay) {}

  void step(ParamSet& params);

  long step_count() const { return t_; }

  struct Moments {
    std::vector<double> m1, m2;
  };
  const std::map<std::string, Moments>& state() const { return state_; }
  std::map<std::string, Moments>& state() { return state_; }
  void set_step_count(long t) { t_ = t; }

 private:
  double lr_, beta1_, beta2_, eps_, weight_decay_;
  long t_ = 0;
  std::map<std::string, Moments> state_;
};

void zero_grads(ParamSet& params);

}  // namespace dforge::ad
