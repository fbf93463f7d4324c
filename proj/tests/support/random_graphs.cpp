#include "random_graphs.hpp"

#include <algorithm>
#include <numeric>
#include <random>

#include "ftso/gradcheck.hpp"

namespace ftso::testing {

namespace {

using Rng = std::mt19937_64;

int uniform_int(Rng& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

Tensor randn(Shape s, Rng& rng, double sd = 1.0) { return Tensor::randn(std::move(s), rng, sd); }

// Entries at least `gap` apart so a max over any window has a unique winner
// that stays put under small perturbations.
Tensor spaced(Shape s, Rng& rng, double gap) {
  Tensor t(std::move(s));
  std::vector<int> order(t.numel());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  const double half = 0.5 * gap * static_cast<double>(t.numel());
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = gap * order[i] - half;
  return t;
}

// Entries with |x| >= margin, random sign.
Tensor away_from_zero(Shape s, Rng& rng, double margin) {
  Tensor t = Tensor::uniform(std::move(s), rng, margin, 1.0);
  std::bernoulli_distribution flip(0.5);
  for (std::size_t i = 0; i < t.numel(); ++i)
    if (flip(rng)) t[i] = -t[i];
  return t;
}

std::vector<int> random_labels(Rng& rng, int n, int classes) {
  std::vector<int> y(static_cast<std::size_t>(n));
  for (auto& v : y) v = uniform_int(rng, 0, classes - 1);
  return y;
}

std::vector<int> distinct_subset(Rng& rng, int n, int k) {
  std::vector<int> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(static_cast<std::size_t>(k));
  return idx;
}

GraphCase mlp(Rng& rng) {
  const int m = uniform_int(rng, 1, 5), k = uniform_int(rng, 1, 6);
  const int h = uniform_int(rng, 2, 7), c = uniform_int(rng, 2, 5);
  GraphCase g;
  g.family = "mlp";
  g.leaves = {randn({m, k}, rng), randn({k, h}, rng, 0.7), randn({h}, rng), randn({h, c}, rng)};
  g.primitives = {"matmul", "add_row_bias", "softmax", "log", "mean", "cross_entropy", "add"};
  auto labels = random_labels(rng, m, c);
  g.build = [labels](Tape&, const std::vector<Var>& v) {
    Var hid = softmax(add_row_bias(matmul(v[0], v[1]), v[2]));
    Var z = matmul(hid, v[3]);
    return add(cross_entropy(z, labels), mean(log(softmax(z))));
  };
  return g;
}

GraphCase conv(Rng& rng) {
  // With one sample the pooled normalized map is exactly beta.
  int n = uniform_int(rng, 2, 3);
  const int groups = uniform_int(rng, 1, 2);
  const int cin = groups * uniform_int(rng, 1, 2), cout = groups * uniform_int(rng, 1, 3);
  const int k = 2 * uniform_int(rng, 0, 1) + 1;
  Conv2dOptions opt;
  opt.stride = uniform_int(rng, 1, 2);
  opt.dilation = uniform_int(rng, 1, 2);
  opt.padding = uniform_int(rng, 0, opt.dilation * (k - 1) / 2);
  opt.groups = groups;
  const int span = opt.dilation * (k - 1) + 1;
  const int hw = span + uniform_int(rng, 1, 4);
  // At least 4 values per channel reach the normalization.
  const int out = (hw + 2 * opt.padding - span) / opt.stride + 1;
  n = std::max(n, (4 + out * out - 1) / (out * out));
  const int classes = std::max(cout, 2);
  GraphCase g;
  g.family = "conv";
  g.leaves = {randn({n, cin, hw, hw}, rng), randn({cout, cin / groups, k, k}, rng, 0.5),
              randn({cout}, rng), Tensor::uniform({cout}, rng, 0.5, 1.5), randn({cout}, rng)};
  g.primitives = {"conv2d", "batch_norm_train", "global_avg_pool", "avg_pool2d", "cross_entropy",
                  "add", "mean", "matmul"};
  auto labels = random_labels(rng, n, classes);
  Tensor head = randn({cout, classes}, rng);
  PoolOptions pool{3, uniform_int(rng, 1, 2), 1};
  g.build = [labels, head, opt, pool](Tape& t, const std::vector<Var>& v) {
    // The pooled term reads the raw conv output: behind normalization alone the
    // loss is exactly invariant to the conv bias.
    Var y = conv2d(v[0], v[1], v[2], opt);
    Var z = batch_norm_train(y, v[3], v[4]);
    Var logits = matmul(global_avg_pool(z), t.constant(head));
    return add(cross_entropy(logits, labels), mean(avg_pool2d(y, pool)));
  };
  return g;
}

GraphCase pool(Rng& rng) {
  const int n = uniform_int(rng, 1, 2), c = uniform_int(rng, 1, 3);
  const int hw = uniform_int(rng, 3, 7);
  PoolOptions opt;
  opt.kernel = uniform_int(rng, 1, 3);
  opt.stride = uniform_int(rng, 1, 2);
  opt.padding = uniform_int(rng, 0, opt.kernel / 2);
  const std::int64_t out = (hw + 2 * opt.padding - opt.kernel) / opt.stride + 1;
  GraphCase g;
  g.family = "pool";
  g.leaves = {spaced({n, c, hw, hw}, rng, 0.05), randn({n, c, out, out}, rng),
              away_from_zero({n * c, hw * hw}, rng, 0.1), randn({n * c * hw * hw}, rng)};
  g.primitives = {"max_pool2d", "relu", "mul", "sum", "reshape", "add", "scale"};
  g.build = [opt](Tape&, const std::vector<Var>& v) {
    Var a = sum(mul(max_pool2d(v[0], opt), v[1]));
    Var r = reshape(relu(v[2]), v[3].shape());
    return add(scale(a, 0.5), sum(mul(r, v[3])));
  };
  return g;
}

GraphCase channels(Rng& rng) {
  const int n = uniform_int(rng, 1, 2), c1 = uniform_int(rng, 1, 3), c2 = uniform_int(rng, 1, 3);
  const int h = uniform_int(rng, 2, 5), w = uniform_int(rng, 2, 5);
  const int c = c1 + c2;
  const int kg = uniform_int(rng, 1, c);
  const int ks = uniform_int(rng, 1, c);
  auto gathered = distinct_subset(rng, c, kg);
  // gather may repeat a channel
  if (kg > 1 && uniform_int(rng, 0, 1)) gathered.back() = gathered.front();
  auto scattered = distinct_subset(rng, c, ks);
  const int ch = uniform_int(rng, 1, h), cw = uniform_int(rng, 1, w);
  const int top = uniform_int(rng, 0, h - ch), left = uniform_int(rng, 0, w - cw);
  GraphCase g;
  g.family = "channels";
  g.leaves = {randn({n, c1, h, w}, rng), randn({n, c2, h, w}, rng), randn({n, ks, h, w}, rng),
              randn({n, c, ch, cw}, rng), randn({n, kg, h, w}, rng)};
  g.primitives = {"concat_channels", "gather_channels", "scatter_channels", "crop2d", "mul", "sum",
                  "add"};
  g.build = [=](Tape&, const std::vector<Var>& v) {
    std::vector<Var> parts{v[0], v[1]};
    Var cat = concat_channels(parts);
    Var sc = scatter_channels(cat, scattered, v[2]);
    Var cr = crop2d(sc, top, left, ch, cw);
    Var ga = gather_channels(cat, gathered);
    return add(sum(mul(cr, v[3])), sum(mul(ga, v[4])));
  };
  return g;
}

GraphCase mixture(Rng& rng) {
  const int m = uniform_int(rng, 1, 5), r = uniform_int(rng, 1, 6), c = uniform_int(rng, 1, 5);
  const int count = uniform_int(rng, 1, r), start = uniform_int(rng, 0, r - count);
  GraphCase g;
  g.family = "mixture";
  g.leaves.push_back(randn({m}, rng));
  for (int i = 0; i < m; ++i) g.leaves.push_back(randn({r, c}, rng));
  g.leaves.push_back(randn({count}, rng));
  g.primitives = {"softmax", "weighted_sum", "slice_rows", "scale_rows", "zeros", "add", "sub",
                  "mul", "sum", "scale"};
  g.build = [=](Tape& t, const std::vector<Var>& v) {
    std::vector<Var> xs(v.begin() + 1, v.begin() + 1 + m);
    Var ws = weighted_sum(xs, softmax(v[0]));
    Var sr = scale_rows(slice_rows(ws, start, count), v.back());
    Var z = sub(add(sr, zeros(t, sr.shape())), scale(slice_rows(xs[0], start, count), 0.3));
    return scale(sum(mul(z, z)), 0.5);
  };
  return g;
}

GraphCase bn_eval(Rng& rng) {
  const int n = uniform_int(rng, 1, 3), c = uniform_int(rng, 1, 3);
  const int hw = uniform_int(rng, 5, 7);
  Tensor rmean = randn({c}, rng);
  Tensor rvar = Tensor::uniform({c}, rng, 0.5, 2.0);
  Conv2dOptions opt;
  opt.padding = 2;
  opt.dilation = 2;
  opt.groups = c;
  GraphCase g;
  g.family = "bn_eval";
  g.leaves = {randn({n, c, hw, hw}, rng), randn({c}, rng), randn({c}, rng),
              randn({c, 1, 3, 3}, rng, 0.5)};
  g.primitives = {"batch_norm_eval", "conv2d", "batch_norm_train", "mean", "mul"};
  g.build = [=](Tape&, const std::vector<Var>& v) {
    Var y = batch_norm_eval(v[0], v[1], v[2], rmean, rvar);
    y = conv2d(y, v[3], Var{}, opt);
    y = batch_norm_train(y, Var{}, Var{});
    return mean(mul(y, v[0]));
  };
  return g;
}

GraphCase chain(Rng& rng) {
  const int r = uniform_int(rng, 1, 5), c = uniform_int(rng, 1, 5);
  const int steps = uniform_int(rng, 2, 6);
  std::vector<int> ops(static_cast<std::size_t>(steps));
  for (auto& o : ops) o = uniform_int(rng, 0, 5);
  const double s = std::uniform_real_distribution<double>(-2.0, 2.0)(rng);
  GraphCase g;
  g.family = "chain";
  g.leaves = {randn({r, c}, rng), randn({r, c}, rng)};
  g.primitives = {"add", "sub", "mul", "scale", "log", "softmax", "reshape", "sum", "mean"};
  g.build = [=](Tape& t, const std::vector<Var>& v) {
    Var x = v[0];
    Tensor one({r, c}, 1.0);
    for (int o : ops) {
      switch (o) {
        case 0: x = add(x, v[1]); break;
        case 1: x = sub(x, v[1]); break;
        case 2: x = mul(x, v[1]); break;
        case 3: x = scale(x, s); break;
        case 4: x = log(add(mul(x, x), t.constant(one))); break;
        default: x = softmax(x); break;
      }
    }
    Var flat = softmax(reshape(x, {static_cast<std::int64_t>(r) * c}));
    return add(sum(mul(flat, reshape(v[1], {static_cast<std::int64_t>(r) * c}))), mean(x));
  };
  return g;
}

}  // namespace

const std::set<std::string>& all_primitives() {
  static const std::set<std::string> names = {
      "add",          "sub",           "mul",          "scale",           "relu",
      "log",          "matmul",        "add_row_bias", "conv2d",          "max_pool2d",
      "avg_pool2d",   "global_avg_pool", "batch_norm_train", "batch_norm_eval", "softmax",
      "sum",          "mean",          "cross_entropy", "concat_channels", "gather_channels",
      "scatter_channels", "weighted_sum", "slice_rows", "scale_rows",     "reshape",
      "crop2d",       "zeros"};
  return names;
}

GraphCase random_graph(int index, std::uint64_t seed) {
  Rng rng(seed * 0x9e3779b97f4a7c15ULL + static_cast<std::uint64_t>(index));
  switch (index % kFamilies) {
    case 0: return mlp(rng);
    case 1: return conv(rng);
    case 2: return pool(rng);
    case 3: return channels(rng);
    case 4: return mixture(rng);
    case 5: return bn_eval(rng);
    default: return chain(rng);
  }
}

GradcheckResult gradcheck_case(const GraphCase& c, double epsilon) {
  std::vector<double> point;
  for (const auto& leaf : c.leaves) point.insert(point.end(), leaf.vec().begin(), leaf.vec().end());

  auto unpack = [&c](std::span<const double> x) {
    std::vector<Tensor> out;
    std::size_t off = 0;
    for (const auto& leaf : c.leaves) {
      std::vector<double> d(x.begin() + static_cast<std::ptrdiff_t>(off),
                            x.begin() + static_cast<std::ptrdiff_t>(off + leaf.numel()));
      out.emplace_back(leaf.shape(), std::move(d));
      off += leaf.numel();
    }
    return out;
  };

  Tape tape;
  std::vector<Var> vars;
  for (const auto& leaf : c.leaves) vars.push_back(tape.input(leaf));
  Var loss = c.build(tape, vars);
  tape.backward(loss);
  std::vector<double> analytic;
  for (const auto& v : vars) {
    Tensor gr = tape.grad(v);
    analytic.insert(analytic.end(), gr.vec().begin(), gr.vec().end());
  }

  auto f = [&](std::span<const double> x) {
    Tape t(false);
    std::vector<Var> vs;
    for (auto& leaf : unpack(x)) vs.push_back(t.input(std::move(leaf), false));
    return c.build(t, vs).value().item();
  };
  auto numeric = finite_diff_gradient(f, point, epsilon);
  return {max_relative_error(analytic, numeric), point.size()};
}

ArchParams random_arch_params(std::uint64_t seed) {
  Rng rng(seed ^ 0x5eed5eedULL);
  const int nodes = uniform_int(rng, 4, 9);
  std::vector<CandidateOp> ops;
  for (auto k : kAllOperators)
    if (uniform_int(rng, 0, 1)) ops.emplace_back(k);
  if (ops.empty() || (ops.size() == 1 && std::get<OperatorKind>(ops[0]) == OperatorKind::Zero))
    ops.emplace_back(OperatorKind::SkipConnect);
  std::shuffle(ops.begin(), ops.end(), rng);
  auto edges = full_cell_edges(nodes);
  ArchParams a = ArchParams::create(nodes, ops, edges, edges);
  for (CellArch* c : {&a.normal, &a.reduce}) {
    for (double& v : c->alpha.value().data()) v = std::normal_distribution<double>(0, 1)(rng);
    for (double& v : c->beta.value().data()) v = std::normal_distribution<double>(0, 1)(rng);
  }
  return a;
}

ArchParams transform_arch(const ArchParams& arch, const std::function<double(double)>& f) {
  ArchParams out = arch;
  for (CellArch* c : {&out.normal, &out.reduce}) {
    for (double& v : c->alpha.value().data()) v = f(v);
    for (double& v : c->beta.value().data()) v = f(v);
  }
  return out;
}

}  // namespace ftso::testing
