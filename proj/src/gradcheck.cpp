#include "jima/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <sstream>
#include <vector>

#include "jima/interactions.hpp"
#include "jima/joint_model.hpp"
#include "jima/nn_core.hpp"

namespace jima {

namespace {

// One checkable parameter: a live pointer into the instance's model, the
// analytic gradient we computed for it, and where it lives (for reporting).
struct Param {
  double* p = nullptr;
  double g = 0.0;
  std::string site;
};

double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-3});
}

// Central differences drift across rectifier kinks, so instances are
// re-drawn until every pre-activation clears this margin. A 1e-5 parameter
// step moves pre-activations by far less.
constexpr double kKinkMargin = 5e-4;

bool clear_of_kinks(const Mlp& net, const MlpCache& cache) {
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    if (net.layers[l].act != Activation::rectifier) continue;
    for (double v : cache.pre[l])
      if (std::abs(v) < kKinkMargin) return false;
  }
  return true;
}

std::string at2(std::size_t i, std::size_t j) {
  return "[" + std::to_string(i) + "," + std::to_string(j) + "]";
}

void collect_mlp_params(Mlp& net, const MlpGrads& grads, const std::string& prefix,
                        std::vector<Param>& out) {
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    DenseLayer& layer = net.layers[l];
    const std::string lp = prefix + "layer " + std::to_string(l) + " ";
    for (std::size_t i = 0; i < layer.W.rows; ++i)
      for (std::size_t j = 0; j < layer.W.cols; ++j)
        out.push_back({&layer.W.at(i, j), grads.dW[l].at(i, j), lp + "W" + at2(i, j)});
    for (std::size_t i = 0; i < layer.b.size(); ++i)
      out.push_back({&layer.b[i], grads.db[l][i], lp + "b[" + std::to_string(i) + "]"});
  }
}

struct Checker {
  const GradCheckConfig& cfg;
  GradCheckReport& rep;

  // Runs central differences at every collected parameter. eval recomputes
  // the instance's scalar loss from current parameter values.
  void check(std::vector<Param>& params, const std::function<double()>& eval,
             std::size_t instance) {
    if (cfg.inject_sign_error && !params.empty()) {
      auto worst = std::max_element(params.begin(), params.end(), [](const Param& a,
                                                                     const Param& b) {
        return std::abs(a.g) < std::abs(b.g);
      });
      worst->g = -worst->g;
      if (std::abs(worst->g) < 1e-2) worst->g -= 0.5;  // keep the corruption visible
    }
    const double h = cfg.step;
    for (Param& prm : params) {
      const double saved = *prm.p;
      *prm.p = saved + h;
      const double up = eval();
      *prm.p = saved - h;
      const double down = eval();
      *prm.p = saved;
      const double fd = (up - down) / (2.0 * h);
      const double err = rel_err(fd, prm.g);
      ++rep.checked_parameters;
      if (err > rep.worst_rel_err) {
        rep.worst_rel_err = err;
        std::ostringstream os;
        os << "instance " << instance << ", " << prm.site << ": analytic " << prm.g
           << " vs finite-difference " << fd;
        rep.worst_site = os.str();
      }
    }
  }
};

// Suite A: standalone network. Loss = (f(x) - y)^2 + lambda * ||theta||^2;
// checks every weight, bias, and input component.
void run_mlp_instance(Checker& chk, std::size_t instance, std::uint64_t seed) {
  for (std::uint64_t attempt = 0;; ++attempt) {
    std::mt19937_64 rng(mix_seed(seed, 0xA000 + attempt));
    std::uniform_real_distribution<double> unit(-1.0, 1.0);

    const std::size_t in_dim = 2 + instance % 5;
    std::vector<std::size_t> hidden;
    switch (instance % 3) {
      case 0: hidden = {4, 3}; break;
      case 1: hidden = {3}; break;
      default: hidden = {5, 4, 3}; break;
    }
    Mlp net = make_mlp(in_dim, hidden, rng());
    std::vector<double> x(in_dim);
    for (double& v : x) v = unit(rng);
    const double target = unit(rng);
    const double lambda = (instance % 4 == 0) ? 0.0 : 0.05;

    MlpCache cache;
    const double out = mlp_forward(net, x.data(), x.size(), &cache);
    if (!clear_of_kinks(net, cache)) continue;
    if (std::abs(out - target) < 0.1) continue;  // keep the data gradient well away from zero

    MlpGrads grads;
    grads.init_like(net);
    std::vector<double> dinput(in_dim);
    mlp_backward(net, cache, 2.0 * (out - target), grads, dinput.data());
    add_l2_gradient(net, lambda, grads);

    std::vector<Param> params;
    collect_mlp_params(net, grads, "net ", params);
    for (std::size_t i = 0; i < in_dim; ++i)
      params.push_back({&x[i], dinput[i], "input[" + std::to_string(i) + "]"});

    auto eval = [&]() {
      const double f = mlp_forward(net, x.data(), x.size(), nullptr);
      return (f - target) * (f - target) + l2_penalty(net, lambda);
    };
    chk.check(params, eval, instance);
    return;
  }
}

// Suite B: the full multi-task objective on a toy joint model, so factor
// rows flow through every interaction block and both L2 terms are active.
void run_joint_instance(Checker& chk, std::size_t instance, std::uint64_t seed) {
  for (std::uint64_t attempt = 0;; ++attempt) {
    std::mt19937_64 rng(mix_seed(seed, 0xB000 + attempt));
    std::uniform_real_distribution<double> unit(-1.0, 1.0);

    const std::size_t K = (instance % 3 == 2) ? 2 : 3;
    const std::size_t r = 1 + instance % 3;
    std::vector<FiberSpec> fibers;
    for (std::size_t f = 0; f < K; ++f)
      fibers.push_back({static_cast<int>(f), 2 + (instance + f) % 2,
                        std::string(1, static_cast<char>('a' + f))});

    std::vector<DataSource> sources;
    if (K == 3) {
      DataSource s1;
      s1.source_id = 1;
      s1.label = "joint";
      s1.fibers = {0, 1, 2};
      sources.push_back(s1);
      DataSource s2;
      s2.source_id = 2;
      s2.label = "pair";
      s2.fibers = {0, 1};
      if (instance % 7 == 3) s2.loss_kind = LossKind::cross_entropy;
      sources.push_back(s2);
      if (instance % 4 == 1) {
        DataSource s3;
        s3.source_id = 3;
        s3.label = "pair2";
        s3.fibers = {1, 2};
        sources.push_back(s3);
      }
    } else {
      DataSource s1;
      s1.source_id = 1;
      s1.label = "pair";
      s1.fibers = {0, 1};
      sources.push_back(s1);
    }

    // every cell of every source gets a value
    for (DataSource& s : sources) {
      std::vector<std::int32_t> idx(s.fibers.size(), 0);
      bool done = false;
      while (!done) {
        double y = unit(rng);
        if (s.loss_kind == LossKind::cross_entropy) y = (unit(rng) > 0.0) ? 1.0 : 0.0;
        s.add(idx.data(), y);
        std::size_t pos = idx.size();
        for (;;) {
          if (pos == 0) {
            done = true;
            break;
          }
          --pos;
          if (++idx[pos] < static_cast<std::int32_t>(fibers[s.fibers[pos]].dim)) break;
          idx[pos] = 0;
        }
      }
    }
    Schema schema = build_schema(fibers, sources);

    ModelConfig mc;
    mc.r = r;
    mc.use_interactions = instance % 2 == 0;
    for (const DataSource& s : schema.sources) mc.sources.push_back(s.source_id);
    mc.head_hidden = {4, 3};
    mc.head_lambda = (instance % 4 == 0) ? 0.0 : 0.03;
    mc.embedding_lambda = (instance % 5 == 0) ? 0.0 : 0.05;
    mc.seed = rng();
    JointModel m = init_joint_model(schema, mc);

    std::vector<std::vector<std::uint32_t>> batches(m.heads.size());
    for (std::size_t hi = 0; hi < m.heads.size(); ++hi) {
      if (hi + 1 == m.heads.size() && m.heads.size() > 1 && instance % 5 == 2)
        continue;  // leave one batch empty: that head must contribute nothing
      const DataSource& src = schema.source(m.heads[hi].source_id);
      std::vector<std::uint32_t> all(src.count());
      for (std::uint32_t i = 0; i < all.size(); ++i) all[i] = i;
      std::shuffle(all.begin(), all.end(), rng);
      all.resize(1 + rng() % std::min<std::size_t>(all.size(), 5));
      batches[hi] = std::move(all);
    }

    // kink margin on every observation the loss will touch
    bool ok = true;
    std::vector<double> feat;
    for (std::size_t hi = 0; hi < m.heads.size() && ok; ++hi) {
      const SourceHead& h = m.heads[hi];
      const DataSource& src = schema.source(h.source_id);
      feat.resize(head_input_dim(h.order(), r, mc.use_interactions));
      for (std::uint32_t obs : batches[hi]) {
        MlpCache cache;
        build_head_input(m, h, src.index_tuple(obs), feat.data());
        mlp_forward(h.net, feat.data(), feat.size(), &cache);
        if (!clear_of_kinks(h.net, cache)) {
          ok = false;
          break;
        }
      }
    }
    if (!ok) continue;

    ModelGrads grads;
    grads.init_like(m);
    multi_task_loss(m, schema, batches, &grads);

    std::vector<Param> params;
    for (std::size_t f = 0; f < m.fibers.size(); ++f) {
      Mat& tbl = m.factors.tables[f];
      for (std::size_t i = 0; i < tbl.rows; ++i)
        for (std::size_t j = 0; j < tbl.cols; ++j)
          params.push_back({&tbl.at(i, j), grads.dfactors[f].at(i, j),
                            "factor " + std::to_string(f) + at2(i, j)});
    }
    for (std::size_t hi = 0; hi < m.heads.size(); ++hi)
      collect_mlp_params(m.heads[hi].net, grads.dheads[hi],
                         "head " + m.heads[hi].label + " ", params);

    auto eval = [&]() { return multi_task_loss(m, schema, batches, nullptr); };
    chk.check(params, eval, instance);
    return;
  }
}

}  // namespace

GradCheckReport run_gradient_check(const GradCheckConfig& cfg) {
  if (cfg.instances == 0) throw ValidationError("gradient check: instances must be >= 1");
  if (!(cfg.step > 0.0) || !(cfg.tolerance > 0.0))
    throw ValidationError("gradient check: step and tolerance must be positive");

  GradCheckReport rep;
  rep.instances = cfg.instances;
  Checker chk{cfg, rep};
  for (std::size_t i = 0; i < cfg.instances; ++i) {
    const std::uint64_t seed = mix_seed(cfg.seed, 7919 * (i + 1));
    if (i % 2 == 0)
      run_joint_instance(chk, i, seed);
    else
      run_mlp_instance(chk, i, seed);
  }
  rep.passed = rep.worst_rel_err < cfg.tolerance;
  return rep;
}

std::string format_gradcheck(const GradCheckReport& rep) {
  std::ostringstream os;
  os << (rep.passed ? "PASS" : "FAIL") << ": " << rep.checked_parameters
     << " gradient components over " << rep.instances
     << " randomized instances, worst relative error " << rep.worst_rel_err;
  if (!rep.worst_site.empty()) os << " at " << rep.worst_site;
  return os.str();
}

}  // namespace jima
