#include <doctest.h>

#include <cmath>

#include "anonact/nn.hpp"
#include "gradcheck.hpp"

using namespace anonact;
using namespace anonact::testutil;

TEST_CASE("elementwise ops match finite differences") {
  Rng rng(11);
  Var x(random_tensor({3, 4}, rng), true);
  Var y(random_tensor({3, 4}, rng, 0.5, 1.5), true);

  CHECK(grad_check_max_rel(x, [&] { return sum_all(add(x, y)); }) < 1e-6);
  CHECK(grad_check_max_rel(x, [&] { return sum_all(mul(x, y)); }) < 1e-6);
  CHECK(grad_check_max_rel(y, [&] { return sum_all(div_elem(x, y)); }) < 1e-6);
  CHECK(grad_check_max_rel(x, [&] { return mean_all(tanh_op(scale(x, 1.7))); }) < 1e-6);
  CHECK(grad_check_max_rel(x, [&] { return sum_all(relu(x)); }) < 1e-6);
  CHECK(grad_check_max_rel(x, [&] { return mean_all(abs_op(add_const(x, 0.3))); }) < 1e-6);
}

TEST_CASE("matmul gradients") {
  Rng rng(12);
  Var a(random_tensor({3, 5}, rng), true);
  Var b(random_tensor({5, 2}, rng), true);
  Var c(random_tensor({4, 5}, rng), true);
  CHECK(grad_check_max_rel(a, [&] { return sum_all(matmul(a, b)); }) < 1e-6);
  CHECK(grad_check_max_rel(b, [&] { return mean_all(matmul(a, b)); }) < 1e-6);
  CHECK(grad_check_max_rel(c, [&] { return sum_all(abs_op(matmul_nt(a, c))); }) < 1e-5);
}

TEST_CASE("conv2d gradients w.r.t. input, weight, bias") {
  Rng rng(13);
  Var x(random_tensor({2, 3, 6, 5}, rng), true);
  Var w(random_tensor({4, 3, 3, 3}, rng, -0.5, 0.5), true);
  Var b(random_tensor({4}, rng), true);
  auto f = [&] { return mean_all(tanh_op(conv2d(x, w, b, 2, 1))); };
  CHECK(grad_check_max_rel(x, f) < 1e-6);
  CHECK(grad_check_max_rel(w, f) < 1e-6);
  CHECK(grad_check_max_rel(b, f) < 1e-6);
}

TEST_CASE("instance_norm gradients and batch independence") {
  Rng rng(14);
  Var x(random_tensor({2, 3, 4, 4}, rng), true);
  Var g(random_tensor({3}, rng, 0.5, 1.5), true);
  Var be(random_tensor({3}, rng), true);
  auto f = [&] { return mean_all(mul(instance_norm(x, g, be), instance_norm(x, g, be))); };
  CHECK(grad_check_max_rel(x, f, sample_indices(x.value().numel(), 24, rng)) < 1e-5);
  CHECK(grad_check_max_rel(g, f) < 1e-5);
  CHECK(grad_check_max_rel(be, f) < 1e-5);

  // per-sample normalization: running each sample alone gives the same rows
  Var one0(Tensor({1, 3, 4, 4}, std::vector<double>(x.value().data(), x.value().data() + 48)));
  Var full = instance_norm(x, g, be);
  Var lone = instance_norm(one0, g, be);
  for (std::int64_t i = 0; i < 48; ++i) CHECK(full.value()[i] == doctest::Approx(lone.value()[i]).epsilon(1e-12));
}

TEST_CASE("linear, upsample, normalize_rows, reductions") {
  Rng rng(15);
  Var x(random_tensor({3, 7}, rng), true);
  Var w(random_tensor({4, 7}, rng), true);
  Var b(random_tensor({4}, rng), true);
  auto f = [&] { return mean_all(abs_op(linear(x, w, b))); };
  CHECK(grad_check_max_rel(x, f) < 1e-6);
  CHECK(grad_check_max_rel(w, f) < 1e-6);
  CHECK(grad_check_max_rel(b, f) < 1e-6);

  Var img(random_tensor({1, 2, 3, 3}, rng), true);
  CHECK(grad_check_max_rel(img, [&] { return sum_all(mul(upsample_nearest2(img), upsample_nearest2(img))); }) < 1e-6);

  Var e(random_tensor({4, 6}, rng), true);
  CHECK(grad_check_max_rel(e, [&] { return sum_all(abs_op(normalize_rows(e))); }) < 1e-5);
  CHECK(grad_check_max_rel(e, [&] { return sum_all(l2norm_rows(e)); }) < 1e-5);

  // normalize_rows output really has unit rows
  Var n = normalize_rows(e);
  for (int i = 0; i < 4; ++i) {
    double s = 0;
    for (int j = 0; j < 6; ++j) s += n.value().at(i, j) * n.value().at(i, j);
    CHECK(std::sqrt(s) == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("gather/replace/select/stack gradients") {
  Rng rng(16);
  Var s(random_tensor({4, 5}, rng), true);
  std::vector<int> labels{1, 0, 4, 2};
  CHECK(grad_check_max_rel(s, [&] { return sum_all(mul(gather_labels(s, labels), gather_labels(s, labels))); }) < 1e-6);

  Var vals(random_tensor({4}, rng), true);
  auto fr = [&] { return mean_all(abs_op(replace_labels(s, labels, vals))); };
  CHECK(grad_check_max_rel(s, fr) < 1e-6);
  CHECK(grad_check_max_rel(vals, fr) < 1e-6);

  std::vector<int> idx{2, 2, 0};  // duplicates accumulate
  CHECK(grad_check_max_rel(s, [&] { return sum_all(mul(select_rows(s, idx), select_rows(s, idx))); }) < 1e-6);

  Var a(random_tensor({2, 3}, rng), true);
  Var b(random_tensor({2, 3}, rng), true);
  CHECK(grad_check_max_rel(a, [&] { return mean_all(abs_op(stack_rows({a, b, a}))); }) < 1e-6);
}

TEST_CASE("loss primitives match finite differences") {
  Rng rng(17);
  Var logits(random_tensor({5, 4}, rng, -2, 2), true);
  std::vector<int> labels{0, 3, 1, 2, 2};
  CHECK(grad_check_max_rel(logits, [&] { return cross_entropy_logits(logits, labels); }, {}, 1e-5) < 1e-6);

  Var z(random_tensor({9}, rng, -2, 2), true);
  Tensor targets({9});
  for (int i = 0; i < 9; ++i) targets[i] = (i % 3 == 0) ? 1.0 : 0.0;
  CHECK(grad_check_max_rel(z, [&] { return bce_logits(z, targets); }, {}, 1e-5) < 1e-6);

  Var p(random_tensor({8}, rng, -3, 3), true);
  Tensor t = random_tensor({8}, rng, -1, 1);
  CHECK(grad_check_max_rel(p, [&] { return smooth_l1_sum(p, t, 1.0); }, {}, 1e-5) < 1e-5);
}

TEST_CASE("cross entropy of a single logit is zero") {
  Var logits(Tensor({2, 1}, {3.7, -1.2}), true);
  CHECK(cross_entropy_logits(logits, {0, 0}).value().item() == doctest::Approx(0.0));
}

TEST_CASE("no-grad guard produces constants") {
  Var x(Tensor({2}, {1.0, 2.0}), true);
  NoGradGuard ng;
  Var y = scale(x, 3.0);
  CHECK_FALSE(y.requires_grad());
}

TEST_CASE("adam minimizes a quadratic and counts steps") {
  Var x(Tensor({3}, {5.0, -4.0, 2.0}), true);
  Adam opt({{"x", x}}, {0.1, 0.5, 0.999, 1e-8});
  double first = 0.0, last = 0.0;
  for (int i = 0; i < 200; ++i) {
    x.zero_grad();
    Var loss = sum_all(mul(x, x));
    if (i == 0) first = loss.value().item();
    last = loss.value().item();
    backward(loss);
    opt.step();
  }
  CHECK(opt.step_count() == 200);
  CHECK(last < 1e-2 * first);
}

TEST_CASE("param_hash tracks value changes") {
  Var x(Tensor({2}, {1.0, 2.0}), true);
  ParamList params{{"x", x}};
  const auto h0 = param_hash(params);
  x.mutable_value()[0] += 1e-9;
  CHECK(param_hash(params) != h0);
  x.mutable_value()[0] -= 1e-9;
  CHECK(param_hash(params) == h0);
}
