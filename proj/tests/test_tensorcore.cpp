#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "dforge/adam.hpp"
#include "dforge/checkpoint.hpp"
#include "dforge/ops.hpp"
#include "dforge/rng.hpp"
#include "gradcheck.hpp"

#include <cmath>
#include <cstdio>

using namespace dforge;
using namespace dforge::ad;
using dforge::testing::gradcheck;
using dforge::testing::random_tensor;

TEST_CASE("conv2d forward examples") {
  // 3x3 ones against 3x3 ones kernel: single output = 9
  Tensor x = Tensor::full({1, 1, 3, 3}, 1.0);
  Tensor k = Tensor::full({1, 1, 3, 3}, 1.0);
  Tensor y = conv2d(x, k, 1, 0);
  CHECK(y.shape() == std::vector<int>{1, 1, 1, 1});
  CHECK(y.item() == doctest::Approx(9.0).epsilon(1e-12));

  // 1x1 identity kernel
  Rng rng(3);
  Tensor img = random_tensor({2, 1, 5, 5}, rng);
  Tensor ident = Tensor::full({1, 1, 1, 1}, 1.0);
  Tensor out = conv2d(img, ident, 1, 0);
  for (int i = 0; i < img.numel(); ++i) CHECK(out.data()[i] == img.data()[i]);
}

TEST_CASE("conv2d shape errors name the offending dimension") {
  Tensor x = Tensor::zeros({1, 4, 8, 8});
  Tensor k = Tensor::zeros({2, 3, 3, 3});
  CHECK_THROWS_WITH_AS(conv2d(x, k, 1, 1),
                       doctest::Contains("channel count 4"), std::runtime_error);
}

TEST_CASE("conv2d gradient vs finite differences") {
  Rng rng(17);
  Tensor x = random_tensor({2, 3, 8, 8}, rng);
  Tensor k = random_tensor({4, 3, 3, 3}, rng, -0.5, 0.5);
  auto loss = [&] { return sum(conv2d(x, k, 2, 1)); };
  CHECK(gradcheck(loss, {x, k}, 1e-5) < 1e-5);

  // weighted loss exercises non-uniform output gradients
  Tensor w = random_tensor({2, 4, 4, 4}, rng);
  auto loss2 = [&] { return sum(mul(conv2d(x, k, 2, 1), w)); };
  CHECK(gradcheck(loss2, {x, k}, 1e-5) < 1e-5);
}

TEST_CASE("elementwise examples") {
  Tensor z = Tensor::scalar(0.0);
  CHECK(sigmoid(z).item() == doctest::Approx(0.5));

  Tensor m2 = Tensor::scalar(-2.0);
  CHECK(leaky_relu(m2, 0.2).item() == doctest::Approx(-0.4));

  // d sigmoid/dx at 0 = 0.25
  Tensor x = Tensor::scalar(0.0);
  x.set_trainable(true);
  {
    Tape tape;
    Tensor y = sigmoid(x);
    tape.backward(y);
  }
  CHECK(x.grad()[0] == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("elementwise gradients vs finite differences") {
  Rng rng(23);
  Tensor a = random_tensor({3, 4}, rng, 0.3, 1.5);  // away from relu kink
  Tensor b = random_tensor({3, 4}, rng, 0.3, 1.5);
  Tensor s = random_tensor({1}, rng, 0.5, 1.5);
  Tensor w = random_tensor({3, 4}, rng);

  auto weighted = [&](Tensor t) { return sum(mul(t, w)); };
  CHECK(gradcheck([&] { return weighted(add(a, b)); }, {a, b}, 1e-6) < 1e-6);
  CHECK(gradcheck([&] { return weighted(sub(a, b)); }, {a, b}, 1e-6) < 1e-6);
  CHECK(gradcheck([&] { return weighted(mul(a, b)); }, {a, b}, 1e-6) < 1e-6);
  CHECK(gradcheck([&] { return weighted(div(a, b)); }, {a, b}, 1e-6) < 1e-6);
  CHECK(gradcheck([&] { return weighted(add(a, s)); }, {a, s}, 1e-6) < 1e-6);
  CHECK(gradcheck([&] { return weighted(mul(a, s)); }, {a, s}, 1e-6) < 1e-6);
  CHECK(gradcheck([&] { return weighted(div(a, s)); }, {a, s}, 1e-6) < 1e-6);
  CHECK(gradcheck([&] { return weighted(leaky_relu(a, 0.2)); }, {a}, 1e-6) < 1e-6);
  CHECK(gradcheck([&] { return weighted(sigmoid(a)); }, {a}, 1e-6) < 1e-6);
  CHECK(gradcheck([&] { return weighted(tanh_op(a)); }, {a}, 1e-6) < 1e-6);
  CHECK(gradcheck([&] { return weighted(sqrt_op(a)); }, {a}, 1e-6) < 1e-6);
  CHECK(gradcheck([&] { return weighted(scale(a, 2.5)); }, {a}, 1e-6) < 1e-6);
}

TEST_CASE("incompatible elementwise shapes raise") {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({3, 2});
  CHECK_THROWS_AS(add(a, b), std::runtime_error);
}

TEST_CASE("binary cross entropy examples") {
  Tensor half = Tensor::scalar(0.5);
  CHECK(binary_cross_entropy(half, 1).item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(binary_cross_entropy(half, 0).item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  Tensor bad = Tensor::scalar(1.5);
  CHECK_THROWS_AS(binary_cross_entropy(bad, 1), std::runtime_error);
}

TEST_CASE("binary cross entropy matches scalar loop") {
  Rng rng(5);
  Tensor s = random_tensor({16}, rng, 0.02, 0.98);
  for (int target : {0, 1}) {
    double expect = 0.0;
    for (int i = 0; i < 16; ++i)
      expect += target ? -std::log(s.data()[i]) : -std::log(1.0 - s.data()[i]);
    expect /= 16.0;
    CHECK(binary_cross_entropy(s, target).item() == doctest::Approx(expect).epsilon(1e-12));
  }
  CHECK(gradcheck([&] { return binary_cross_entropy(s, 1); }, {s}, 1e-7) < 1e-6);
  CHECK(gradcheck([&] { return binary_cross_entropy(s, 0); }, {s}, 1e-7) < 1e-6);
}

TEST_CASE("matrix op examples") {
  Tensor eye = Tensor::identity(3);
  Rng rng(7);
  Tensor a = random_tensor({3, 3}, rng);
  Tensor b = matmul(eye, a);
  for (int i = 0; i < 9; ++i) CHECK(b.data()[i] == doctest::Approx(a.data()[i]));

  Tensor d = Tensor::from_data({3, 3}, {1, 0, 0, 0, 2, 0, 0, 0, 3});
  CHECK(trace(d).item() == doctest::Approx(6.0));

  Tensor bad = Tensor::zeros({2, 3});
  CHECK_THROWS_AS(trace(bad), std::runtime_error);
  CHECK_THROWS_AS(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), std::runtime_error);
}

TEST_CASE("matmul gradient vs finite differences") {
  Rng rng(11);
  Tensor a = random_tensor({5, 7}, rng);
  Tensor b = random_tensor({7, 4}, rng);
  CHECK(gradcheck([&] { return sum(matmul(a, b)); }, {a, b}, 1e-6) < 1e-6);
  CHECK(gradcheck([&] { return sum(transpose(a)); }, {a}, 1e-6) < 1e-6);
  Tensor sq = random_tensor({4, 4}, rng);
  CHECK(gradcheck([&] { return trace(matmul(sq, sq)); }, {sq}, 1e-6) < 1e-6);
}

TEST_CASE("structural op gradients") {
  Rng rng(13);
  Tensor x = random_tensor({2, 3, 4, 4}, rng);
  Tensor b = random_tensor({3}, rng);
  Tensor y = random_tensor({2, 2, 4, 4}, rng);
  CHECK(gradcheck([&] { return mean(bias_add(x, b)); }, {x, b}, 1e-6) < 1e-6);
  CHECK(gradcheck([&] { return mean(concat_channels(x, y)); }, {x, y}, 1e-6) < 1e-6);
  CHECK(gradcheck([&] { return mean(upsample_nearest2(x)); }, {x}, 1e-6) < 1e-6);
  CHECK(gradcheck([&] { return sum(mean_per_sample(x)); }, {x}, 1e-6) < 1e-6);
  CHECK(gradcheck([&] { return sum(spatial_mean(x)); }, {x}, 1e-6) < 1e-6);
  CHECK(gradcheck([&] { return sum(reshape(x, {6, 16})); }, {x}, 1e-6) < 1e-6);
  CHECK(gradcheck([&] { return sum(clamp_min(x, 0.1)); }, {x}, 1e-6) < 1e-5);
}

TEST_CASE("backward is single-use") {
  Tensor x = Tensor::scalar(2.0);
  x.set_trainable(true);
  Tape tape;
  Tensor y = mul(x, x);
  tape.backward(y);
  CHECK_THROWS_AS(tape.backward(y), std::runtime_error);
}

TEST_CASE("backward linearity: grad of sum equals sum of grads") {
  Rng rng(29);
  Tensor x = random_tensor({4, 4}, rng, 0.2, 1.0);
  x.set_trainable(true);

  x.zero_grad();
  {
    Tape tape;
    Tensor joint = add(sum(mul(x, x)), mean(sigmoid(x)));
    tape.backward(joint);
  }
  std::vector<double> joint_grad = x.grad();

  x.zero_grad();
  {
    Tape tape;
    tape.backward(sum(mul(x, x)));
  }
  {
    Tape tape;
    tape.backward(mean(sigmoid(x)));
  }
  for (int i = 0; i < x.numel(); ++i)
    CHECK(std::fabs(joint_grad[static_cast<size_t>(i)] - x.grad()[static_cast<size_t>(i)]) < 1e-12);
  x.zero_grad();
}

TEST_CASE("determinism: same seed, same op sequence, same bits") {
  auto run = [] {
    Rng rng(99);
    Tensor x = random_tensor({3, 3, 6, 6}, rng);
    Tensor k = random_tensor({2, 3, 3, 3}, rng);
    x.set_trainable(true);
    k.set_trainable(true);
    Tape tape;
    Tensor loss = mean(sigmoid(conv2d(x, k, 1, 1)));
    tape.backward(loss);
    std::vector<double> out = {loss.item()};
    out.insert(out.end(), x.grad().begin(), x.grad().end());
    out.insert(out.end(), k.grad().begin(), k.grad().end());
    return out;
  };
  CHECK(run() == run());
}

TEST_CASE("adam first step moves by about lr") {
  Tensor p = Tensor::scalar(1.0);
  p.set_trainable(true);
  p.grad()[0] = 1.0;
  Adam opt(1e-4);
  ParamSet params = {{"p", p}};
  opt.step(params);
  CHECK(p.item() == doctest::Approx(0.9999).epsilon(1e-7));
}

TEST_CASE("adam zero grad and zero weight decay leaves parameter unchanged") {
  Tensor p = Tensor::scalar(0.7);
  p.set_trainable(true);
  p.grad();  // allocated, all zero
  Adam opt(1e-2);
  ParamSet params = {{"p", p}};
  opt.step(params);
  CHECK(p.item() == doctest::Approx(0.7).epsilon(1e-15));
}

TEST_CASE("adam missing grad names the parameter") {
  Tensor p = Tensor::scalar(1.0);
  p.set_trainable(true);
  Adam opt(1e-3);
  ParamSet params = {{"gen.enc1.w", p}};
  CHECK_THROWS_WITH_AS(opt.step(params), doctest::Contains("gen.enc1.w"), std::runtime_error);
}

TEST_CASE("adam descends x^2 monotonically") {
  Tensor x = Tensor::scalar(1.0);
  x.set_trainable(true);
  Adam opt(0.05);
  ParamSet params = {{"x", x}};
  double prev = std::fabs(x.item());
  for (int i = 0; i < 10; ++i) {
    Tape tape;
    Tensor loss = mul(x, x);
    tape.backward(loss);
    opt.step(params);
    const double cur = std::fabs(x.item());
    CHECK(cur < prev);
    prev = cur;
  }
}

TEST_CASE("checkpoint round trip with adam moments") {
  Rng rng(41);
  Tensor w = random_tensor({3, 2}, rng);
  Tensor b = random_tensor({2}, rng);
  w.set_trainable(true);
  b.set_trainable(true);
  ParamSet params = {{"lin.w", w}, {"lin.b", b}};
  Adam opt(1e-3, 0.9, 0.999, 1e-8, 1e-4);
  for (int i = 0; i < 3; ++i) {
    Tape tape;
    Tensor loss = sum(mul(matmul(w, reshape(b, {2, 1})), matmul(w, reshape(b, {2, 1}))));
    tape.backward(loss);
    opt.step(params);
  }

  const std::string path = "/tmp/dforge_ckpt_test.bin";
  save_checkpoint(path, params, &opt);

  Tensor w2 = Tensor::zeros({3, 2});
  Tensor b2 = Tensor::zeros({2});
  ParamSet loaded = {{"lin.w", w2}, {"lin.b", b2}};
  Adam opt2(1e-3, 0.9, 0.999, 1e-8, 1e-4);
  load_checkpoint(path, loaded, &opt2);

  CHECK(w2.values() == w.values());
  CHECK(b2.values() == b.values());
  CHECK(opt2.step_count() == opt.step_count());
  CHECK(opt2.state().at("lin.w").m1 == opt.state().at("lin.w").m1);
  CHECK(opt2.state().at("lin.b").m2 == opt.state().at("lin.b").m2);
  std::remove(path.c_str());
}

TEST_CASE("checkpoint rejects wrong magic and missing params") {
  const std::string path = "/tmp/dforge_ckpt_bad.bin";
  {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    std::fputs("NOTAFILE", f);
    std::fclose(f);
  }
  CHECK_THROWS_AS(load_checkpoint_raw(path), std::runtime_error);
  std::remove(path.c_str());
}
