// Acceptance gate: one PASS/FAIL line per criterion.
//
// Exit status is 0 when every failing criterion is listed in --expect-red,
// so a known-unattainable criterion stays visibly red without hiding new
// regressions. Training runs are cached by configuration and shared between
// criteria.

#include "pc2m/experiments.hpp"

#include "assignment_oracle.hpp"
#include "eigen_oracle.hpp"
#include "sinkhorn_oracle.hpp"
#include "spectral_fixtures.hpp"
#include "test_util.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <numeric>
#include <sstream>

using namespace pc2m;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int digits = 4) {
  std::ostringstream os;
  os << std::setprecision(digits) << v;
  return os.str();
}

Eigen::MatrixXd softmax_chain(const Eigen::MatrixXd& p, const Eigen::MatrixXd& grad_p) {
  const Eigen::VectorXd inner = grad_p.cwiseProduct(p).rowwise().sum();
  return p.cwiseProduct(grad_p.colwise() - inner);
}

Eigen::MatrixXd random_logits(std::mt19937_64& rng, int n, int c, double scale) {
  std::normal_distribution<double> g(0.0, scale);
  Eigen::MatrixXd l(n, c);
  for (Eigen::Index i = 0; i < l.size(); ++i) l.data()[i] = g(rng);
  return l;
}

Eigen::MatrixXd tight_plan(const PredictionMatrix& p, const DiscreteMeasure& alpha) {
  SinkhornOptions opts;
  opts.tol = 1e-13;
  opts.max_iter = 100000;
  return sinkhorn(gibbs_kernel(p, 1.0), make_patch_marginal(std::size_t(p.rows())), alpha, opts).coupling.values;
}

// ---------------------------------------------------------------------------
// Training runs

struct RunSummary {
  double miou = 0.0;
  double entropy = 0.0;
  std::vector<double> js_ground_truth;
  bool branches_identical = true;
};

class RunCache {
 public:
  RunCache(std::vector<LabeledImage> dataset, std::ostream* summary)
      : dataset_(std::move(dataset)), summary_(summary) {
    if (summary_) *summary_ << "run,seed,final_miou,final_entropy,final_js_gt,seconds\n";
  }

  const RunSummary& get(const std::string& name, const RunConfig& cfg) {
    const std::string key = name + "/" + std::to_string(cfg.seed);
    if (auto it = runs_.find(key); it != runs_.end()) return it->second;
    const auto t0 = std::chrono::steady_clock::now();
    const ExperimentResult r = run_experiment(cfg, dataset_);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    RunSummary s;
    s.miou = r.final_miou();
    s.entropy = r.final_entropy();
    for (const auto& rec : r.train.records) {
      s.js_ground_truth.push_back(rec.js_ground_truth);
      s.branches_identical = s.branches_identical && rec.a_tilde == rec.a_tilde_local;
    }
    std::cerr << "  run " << key << ": mIoU " << fmt(s.miou) << ", H " << fmt(s.entropy) << ", JS "
              << fmt(s.js_ground_truth.back()) << " (" << fmt(secs, 3) << " s)\n";
    if (summary_)
      *summary_ << name << ',' << cfg.seed << ',' << s.miou << ',' << s.entropy << ',' << s.js_ground_truth.back()
                << ',' << secs << '\n'
                << std::flush;
    return runs_.emplace(key, std::move(s)).first->second;
  }

  std::span<const LabeledImage> dataset() const { return dataset_; }

 private:
  std::vector<LabeledImage> dataset_;
  std::ostream* summary_;
  std::map<std::string, RunSummary> runs_;
};

RunConfig with_seed(RunConfig cfg, int seed) {
  cfg.seed = static_cast<std::uint64_t>(seed);
  return cfg;
}

constexpr int kSeeds[] = {1, 2, 3};

// ---------------------------------------------------------------------------
// Criteria

Outcome ot_oracle() {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> n_dist(1, 6), c_dist(1, 4);
  double worst_entry = 0.0, worst_violation = 0.0;
  bool converged = true;
  for (int t = 0; t < 50; ++t) {
    const int n = n_dist(rng), c = c_dist(rng);
    const double eps = t % 2 ? 0.5 : 1.0;
    const auto p = test::random_prediction(rng, n, c, 1.5);
    const auto alpha = test::random_simplex(rng, c, MeasureRole::AreaTarget);
    const auto delta = make_patch_marginal(std::size_t(n));
    SinkhornOptions opts;
    opts.tol = 1e-10;
    opts.max_iter = 100000;
    const auto r = sinkhorn(gibbs_kernel(p, eps), delta, alpha, opts);
    const auto ref = oracle::sinkhorn_long(p.values(), eps, delta.weights(), alpha.weights());
    converged = converged && r.converged;
    worst_entry = std::max(worst_entry, (r.coupling.values - ref.q).cwiseAbs().maxCoeff());
    worst_violation = std::max(worst_violation, marginal_violation(r.coupling.values, delta, alpha));
  }
  return {converged && worst_entry <= 1e-8 && worst_violation <= 1e-6,
          "50 instances, max |Q - Q_oracle| " + fmt(worst_entry) + " (<= 1e-8), max violation " +
              fmt(worst_violation) + " (<= 1e-6)"};
}

Outcome fixed_points() {
  std::mt19937_64 rng(77);
  bool sinkhorn_ok = true;
  double worst_scaling = 0.0;
  for (int t = 0; t < 50; ++t) {
    const int n = 2 + int(rng() % 15), c = 2 + int(rng() % 5);
    const auto p = test::random_prediction(rng, n, c);
    const auto alpha = DiscreteMeasure::normalized(p.values().colwise().mean().transpose(), MeasureRole::AreaTarget);
    SinkhornOptions opts;
    opts.tol = 1e-12;
    const auto r = sinkhorn(gibbs_kernel(p, 1.0), make_patch_marginal(std::size_t(n)), alpha, opts);
    const double spread = std::max((r.u.array() - r.u.mean()).abs().maxCoeff(), (r.v.array() - r.v.mean()).abs().maxCoeff());
    worst_scaling = std::max(worst_scaling, spread);
    sinkhorn_ok = sinkhorn_ok && fixed_point_test(p, alpha, 1.0, 1e-12) && r.converged && r.iterations <= 1 &&
                  spread <= 1e-9;
  }

  // EMA: the detector fires exactly on the pairs where the state equals the mean density.
  bool ema_ok = true;
  int fixed = 0;
  for (int t = 0; t < 200; ++t) {
    const auto a = test::random_simplex(rng, 5, MeasureRole::AreaState);
    const bool at_mean = t % 2 == 0;
    const auto mean = at_mean ? a : test::random_simplex(rng, 5, MeasureRole::AreaState);
    const AreaState prev{a, 0, 0.02};
    const AreaState next = ema_update(prev, mean, 0.02);
    const bool detected = ema_fixed_point(next, prev, mean, 1e-12);
    fixed += detected;
    ema_ok = ema_ok && detected == at_mean;
  }
  return {sinkhorn_ok && ema_ok, "Sinkhorn: 50 constructed fixed points, <= 1 iteration, max scaling spread " +
                                     fmt(worst_scaling) + "; EMA detector fired on " + std::to_string(fixed) +
                                     "/200 pairs, exactly the 100 with a~ = mean density"};
}

Outcome branch_statements(RunCache& runs, const RunConfig& base) {
  // (1) a full default run keeps the global and local bookkeeping bit-identical
  const bool shared = runs.get("weak", with_seed(base, 1)).branches_identical;

  // (2) distinct predictions give distinct plans
  std::mt19937_64 rng(91);
  bool distinct = true;
  double smallest_gap = std::numeric_limits<double>::infinity();
  for (int t = 0; t < 50; ++t) {
    const int n = 2 + int(rng() % 10), c = 2 + int(rng() % 4);
    const auto pl = test::random_prediction(rng, n, c);
    Eigen::MatrixXd g = pl.values();
    const Eigen::Index row = Eigen::Index(rng() % std::uint64_t(n));
    Eigen::Index low;
    g.row(row).minCoeff(&low);
    g.row(row) *= 0.5;
    g(row, low) += 0.5;
    const PredictionMatrix pg(g);
    if ((pg.values() - pl.values()).cwiseAbs().maxCoeff() < 0.05) continue;
    const auto alpha = test::random_simplex(rng, c, MeasureRole::AreaTarget);
    const auto delta = make_patch_marginal(std::size_t(n));
    const double gap =
        (sinkhorn(gibbs_kernel(pl, 1.0), delta, alpha).coupling.values - sinkhorn(gibbs_kernel(pg, 1.0), delta, alpha).coupling.values)
            .cwiseAbs()
            .maxCoeff();
    smallest_gap = std::min(smallest_gap, gap);
    distinct = distinct && gap > 0.0;
  }

  // (3) iterate the EMA against the mean density of an untrained network until two states agree
  const auto dataset = runs.dataset();
  const Checkpoint ck = initial_checkpoint(base, class_frequencies(labels_of(dataset), base.data.class_count));
  std::vector<DiscreteMeasure> densities;
  for (const auto& d : dataset) densities.push_back(predicted_density(ck, d.image));
  const DiscreteMeasure mean = mean_density(densities);
  AreaState state = ck.area;
  int steps = 0;
  double gap = 1.0;
  for (; steps < 100000; ++steps) {
    const AreaState next = ema_update(state, mean, base.gamma);
    const bool equal = next.a_tilde.weights() == state.a_tilde.weights();
    state = next;
    if (equal) {
      gap = (state.a_tilde.weights() - mean.weights()).cwiseAbs().maxCoeff();
      break;
    }
  }
  const bool converged = gap <= 1e-9;
  return {shared && distinct && converged,
          std::string("(1) branch states bit-identical over a 200-epoch run: ") + (shared ? "yes" : "no") +
              "; (2) min |Q^l - Q^g| " + fmt(smallest_gap) + " > 0; (3) equal states after " + std::to_string(steps) +
              " EMA steps, |a~ - mean| " + fmt(gap) + " (<= 1e-9)"};
}

Outcome gradient_fidelity(const RunConfig& base, std::span<const LabeledImage> dataset) {
  std::mt19937_64 rng(313);
  double match_err = 0.0, mce_err = 0.0, pc2m_err = 0.0;
  for (int t = 0; t < 20; ++t) {
    Eigen::MatrixXd lg = random_logits(rng, 4, 3, 1.0), ll = random_logits(rng, 4, 3, 1.0);
    const auto alpha = test::random_simplex(rng, 3, MeasureRole::AreaTarget);
    const Eigen::MatrixXd qg = tight_plan(softmax_rows(lg, 1.0), alpha), ql = tight_plan(softmax_rows(ll, 1.0), alpha);
    const BatchAlignment align = {2, 0, -1, 1};
    const auto pg = softmax_rows(lg, 1.0), pl = softmax_rows(ll, 1.0);
    const auto r = match_loss(pg, pl, qg, ql, align);
    std::vector<NamedMatrix> params = {{"global", &lg}, {"local", &ll}};
    std::vector<Eigen::MatrixXd> analytic = {softmax_chain(pg.values(), r.grad_p_global),
                                             softmax_chain(pl.values(), r.grad_p_local)};
    match_err = std::max(match_err, grad_check([&] { return match_loss(softmax_rows(lg, 1.0), softmax_rows(ll, 1.0), qg, ql, align).value; },
                                               params, analytic)
                                        .max_rel_error);
  }
  {
    std::uniform_real_distribution<double> u(0.05, 0.95);
    Eigen::MatrixXd s(4, 5), y(4, 5);
    for (Eigen::Index i = 0; i < s.size(); ++i) {
      s.data()[i] = u(rng);
      y.data()[i] = double(rng() % 2);
    }
    std::vector<NamedMatrix> params = {{"scores", &s}};
    std::vector<Eigen::MatrixXd> analytic = {mce_loss(s, y).grad_scores};
    mce_err = grad_check([&] { return mce_loss(s, y).value; }, params, analytic).max_rel_error;
  }
  {
    const int k = 4, c = 3, n = 2 * k;
    Eigen::MatrixXd lg = random_logits(rng, n, c, 2.0), ll = random_logits(rng, n, c, 2.0);
    const auto alpha = test::random_simplex(rng, c, MeasureRole::AreaTarget);
    const Eigen::MatrixXd qg = tight_plan(softmax_rows(lg, 1.0), alpha), ql = tight_plan(softmax_rows(ll, 1.0), alpha);
    Eigen::MatrixXd labels(2, c);
    labels << 1, 0, 1, 1, 1, 0;
    auto run = [&](const PredictionMatrix& pg, const PredictionMatrix& pl) {
      Pc2mInputs in;
      in.p_global = &pg;
      in.p_local = &pl;
      in.q_global = &qg;
      in.q_local = &ql;
      in.alignment = {1, 0, 3, -1, 4, 5, 7, 6};
      in.patches_per_image = k;
      in.labels = &labels;
      return pc2m_loss(in);
    };
    const auto pg = softmax_rows(lg, 1.0), pl = softmax_rows(ll, 1.0);
    const auto r = run(pg, pl);
    std::vector<NamedMatrix> params = {{"global", &lg}, {"local", &ll}};
    std::vector<Eigen::MatrixXd> analytic = {softmax_chain(pg.values(), r.grad_p_global),
                                             softmax_chain(pl.values(), r.grad_p_local)};
    pc2m_err = grad_check([&] { return run(softmax_rows(lg, 1.0), softmax_rows(ll, 1.0)).loss.total; }, params, analytic)
                   .max_rel_error;
  }
  std::vector<LabeledImage> pair(dataset.begin(), dataset.begin() + 2);
  const GradCheckReport net = network_grad_check(base, pair);
  const double worst = std::max({match_err, mce_err, pc2m_err, net.max_rel_error});
  return {worst <= 1e-4, "max rel error: match " + fmt(match_err) + ", MCE " + fmt(mce_err) + ", full loss " +
                             fmt(pc2m_err) + ", network " + fmt(net.max_rel_error) + " over " +
                             std::to_string(net.checked) + " entries (<= 1e-4)"};
}

Outcome area_convergence(RunCache& runs, const RunConfig& base) {
  const auto& js = runs.get("weak", with_seed(base, 1)).js_ground_truth;
  const std::size_t half = js.size() / 2;
  int increases = 0;
  double worst_increase = 0.0;
  for (std::size_t m = half + 1; m < js.size(); ++m)
    if (js[m] > js[m - 1]) {
      ++increases;
      worst_increase = std::max(worst_increase, js[m] - js[m - 1]);
    }
  return {js.back() < 0.05 && increases == 0,
          "final D_JS(a*||a~) " + fmt(js.back()) + " (< 0.05); increases over the last half: " +
              std::to_string(increases) + (increases ? " (largest " + fmt(worst_increase) + ")" : "")};
}

Outcome gamma_ordering(RunCache& runs, const RunConfig& base) {
  int ok = 0;
  std::string detail;
  for (int seed : kSeeds) {
    RunConfig g0 = with_seed(base, seed), g2 = with_seed(base, seed);
    g0.gamma = 0.0;
    g2.gamma = 0.2;
    const auto& frozen = runs.get("gamma=0", g0);
    const auto& def = runs.get("weak", with_seed(base, seed));
    const auto& fast = runs.get("gamma=0.2", g2);
    const bool pass = def.miou >= frozen.miou && def.miou > fast.miou && fast.entropy < def.entropy;
    ok += pass;
    detail += " seed " + std::to_string(seed) + ": mIoU " + fmt(frozen.miou) + "/" + fmt(def.miou) + "/" +
              fmt(fast.miou) + ", H(0.02) " + fmt(def.entropy) + " H(0.2) " + fmt(fast.entropy) + ";";
  }
  return {ok == 3, std::to_string(ok) + "/3 seeds ordered (mIoU at gamma 0/0.02/0.2):" + detail};
}

Outcome ablation_ordering(RunCache& runs, const RunConfig& base) {
  int ok = 0;
  std::string detail;
  for (int seed : kSeeds) {
    RunConfig no_ot = with_seed(base, seed), self = with_seed(base, seed);
    no_ot.no_ot = true;
    self.self_match = true;
    const auto& def = runs.get("weak", with_seed(base, seed));
    const auto& a = runs.get("no-ot", no_ot);
    const auto& b = runs.get("self-match", self);
    ok += def.miou > a.miou && def.miou > b.miou;
    detail += " seed " + std::to_string(seed) + ": " + fmt(def.miou) + " vs no-OT " + fmt(a.miou) + ", self " +
              fmt(b.miou) + ";";
  }
  return {ok == 3, std::to_string(ok) + "/3 seeds:" + detail};
}

Outcome beta_trend(RunCache& runs, const RunConfig& base) {
  double mean[3] = {0, 0, 0};
  const double betas[3] = {0.0, 0.5, 1.0};
  std::string detail;
  for (int b = 0; b < 3; ++b) {
    detail += " beta " + fmt(betas[b]) + ":";
    for (int seed : kSeeds) {
      RunConfig cfg = with_seed(base, seed);
      cfg.mode = RunMode::BetaMix;
      cfg.beta = betas[b];
      const double m = runs.get("beta=" + fmt(betas[b]), cfg).miou;
      mean[b] += m / 3.0;
      detail += " " + fmt(m);
    }
    detail += ";";
  }
  return {mean[0] > mean[1] && mean[1] >= mean[2], "seed-mean mIoU " + fmt(mean[0]) + " > " + fmt(mean[1]) +
                                                       " >= " + fmt(mean[2]) + " (per seed:" + detail + ")"};
}

Outcome spectral_suite(const RunConfig& base) {
  std::mt19937_64 rng(409);
  std::normal_distribution<double> jitter(0.0, 0.1);

  // block-diagonal affinities: k_e = blocks, exact partition recovery
  bool blocks_ok = true;
  for (int t = 0; t < 20; ++t) {
    const int blocks = 2 + t % 3;
    std::vector<int> truth(16);
    for (auto& b : truth) b = int(rng() % std::uint64_t(blocks));
    for (int b = 0; b < blocks; ++b) truth[std::size_t(b)] = b;  // every block non-empty
    Eigen::MatrixXd f = Eigen::MatrixXd::Zero(16, blocks);
    for (int i = 0; i < 16; ++i) f(i, truth[std::size_t(i)]) = 1.0 + jitter(rng);
    const auto g = patch_affinity(f);
    const auto r = cluster_eigenvectors(degree_scaled(g, eigendecompose(g, blocks)), blocks, 3, 4);
    for (int i = 0; i < 16; ++i)
      for (int j = 0; j < 16; ++j)
        blocks_ok = blocks_ok && ((truth[std::size_t(i)] == truth[std::size_t(j)]) ==
                                  (r.region_of_patch[std::size_t(i)] == r.region_of_patch[std::size_t(j)]));
  }

  // eigenpairs against the dense oracle
  double value_err = 0.0, vector_err = 0.0;
  std::normal_distribution<double> unit(0.0, 1.0);
  for (int t = 0; t < 20; ++t) {
    Eigen::MatrixXd f(12, 6);
    for (Eigen::Index i = 0; i < f.size(); ++i) f.data()[i] = unit(rng);
    const auto g = patch_affinity(f);
    const auto mine = eigendecompose(g, 12);
    const auto ref = oracle::dense_symmetric_eigen(g.laplacian);
    value_err = std::max(value_err, (mine.eigenvalues - ref.values).cwiseAbs().maxCoeff());
    for (int k = 0; k < 12; ++k) {
      const double lo = k > 0 ? ref.values[k] - ref.values[k - 1] : 1.0;
      const double hi = k < 11 ? ref.values[k + 1] - ref.values[k] : 1.0;
      if (std::min(lo, hi) < 1e-4) continue;  // a repeated eigenvalue fixes only the subspace
      vector_err = std::max(vector_err, oracle::signless_distance(mine.eigenvectors.col(k), ref.vectors.col(k)));
    }
  }

  // two-shape images, patch aligned
  const auto sig = base.data.signatures();
  EncoderConfig ecfg = base.encoder;
  ecfg.image_size = 64;
  const EncoderParams enc = EncoderParams::init(ecfg, mix_seed(base.seed, 1));
  double worst_iou = 1.0, mean_iou = 0.0;
  for (std::uint64_t s = 0; s < 50; ++s) {
    const auto shape = test::two_shape_image(1000 + s, 64, ecfg.patch_size, sig);
    const double iou = test::region_iou(shape.patch_class, image_regions(shape.image, enc, base.spectral).region_of_patch);
    worst_iou = std::min(worst_iou, iou);
    mean_iou += iou / 50.0;
  }
  return {blocks_ok && value_err <= 1e-8 && vector_err <= 1e-8 && worst_iou >= 0.9,
          std::string("block recovery ") + (blocks_ok ? "exact" : "FAILED") + " on 20 graphs; eigen error values " +
              fmt(value_err) + ", vectors " + fmt(vector_err) + " (<= 1e-8); two-shape region IoU min " +
              fmt(worst_iou) + ", mean " + fmt(mean_iou) + " over 50 images (>= 0.9)"};
}

Outcome hungarian_brute_force() {
  std::mt19937_64 rng(503);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  int checked = 0, agree = 0;
  for (int k = 1; k <= 6; ++k)
    for (int t = 0; t < 100; ++t) {
      Eigen::MatrixXd s(k, k);
      // every fourth matrix has coarse integer scores, so ties occur
      for (Eigen::Index i = 0; i < s.size(); ++i) s.data()[i] = t % 4 == 3 ? double(rng() % 3) : u(rng);
      const auto mine = hungarian_match(s);
      const auto ref = oracle::brute_force_assignment(s);
      ++checked;
      agree += mine.permutation == ref.permutation && std::abs(mine.total - ref.total) <= 1e-12;
    }
  return {agree == checked, std::to_string(agree) + "/" + std::to_string(checked) +
                                " matrices (100 per k = 1..6) equal to brute force, permutation and total"};
}

Outcome weak_over_unsupervised(RunCache& runs, const RunConfig& base, const std::map<int, bool>& earlier) {
  int ok = 0;
  std::string detail;
  for (int seed : kSeeds) {
    RunConfig u = with_seed(base, seed);
    u.mode = RunMode::Unsupervised;
    const double weak = runs.get("weak", with_seed(base, seed)).miou;
    const double unsup = runs.get("unsupervised", u).miou;
    ok += weak > unsup;
    detail += " seed " + std::to_string(seed) + ": " + fmt(weak) + " vs " + fmt(unsup) + ";";
  }
  std::string red, missing;
  for (int c = 5; c <= 9; ++c) {
    const auto it = earlier.find(c);
    if (it == earlier.end())
      missing += " " + std::to_string(c);
    else if (!it->second)
      red += " " + std::to_string(c);
  }
  const bool pass = ok == 3 && red.empty() && missing.empty();
  return {pass, "large-scale mIoU not attempted (desk-scale substitute); weak > unsupervised on " +
                    std::to_string(ok) + "/3 seeds:" + detail +
                    (red.empty() && missing.empty() ? " criteria 5-9 pass" : "") +
                    (red.empty() ? "" : " criteria failing:" + red) +
                    (missing.empty() ? "" : " criteria not run:" + missing)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria 1-11"};
  std::vector<int> only, expect_red;
  std::string runs_csv;
  app.add_option("--only", only, "run only these criteria")->delimiter(',');
  app.add_option("--expect-red", expect_red, "criteria known to be unattainable; their FAIL does not fail the exit code")
      ->delimiter(',');
  app.add_option("--runs-csv", runs_csv, "write a summary row per training run");
  CLI11_PARSE(app, argc, argv);

  auto wanted = [&](int c) { return only.empty() || std::find(only.begin(), only.end(), c) != only.end(); };
  const RunConfig base;
  std::ofstream runs_os;
  if (!runs_csv.empty()) runs_os.open(runs_csv);
  RunCache runs(config_dataset(base), runs_csv.empty() ? nullptr : &runs_os);

  const std::vector<std::pair<int, std::string>> names = {
      {1, "OT oracle equivalence"},      {2, "fixed points"},          {3, "branch and fixed-point statements"},
      {4, "gradient fidelity"},          {5, "area convergence"},      {6, "gamma-sweep ordering"},
      {7, "ablation ordering"},          {8, "beta-mixing trend"},     {9, "spectral suite"},
      {10, "Hungarian vs brute force"}, {11, "weak over unsupervised"},
  };
  std::map<int, bool> results;
  bool unexpected = false;
  for (const auto& [id, name] : names) {
    if (!wanted(id)) continue;
    std::cerr << "criterion " << id << " (" << name << ")\n";
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      switch (id) {
        case 1: o = ot_oracle(); break;
        case 2: o = fixed_points(); break;
        case 3: o = branch_statements(runs, base); break;
        case 4: o = gradient_fidelity(base, runs.dataset()); break;
        case 5: o = area_convergence(runs, base); break;
        case 6: o = gamma_ordering(runs, base); break;
        case 7: o = ablation_ordering(runs, base); break;
        case 8: o = beta_trend(runs, base); break;
        case 9: o = spectral_suite(base); break;
        case 10: o = hungarian_brute_force(); break;
        case 11: o = weak_over_unsupervised(runs, base, results); break;
      }
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    results[id] = o.pass;
    const bool known = std::find(expect_red.begin(), expect_red.end(), id) != expect_red.end();
    if (!o.pass && !known) unexpected = true;
    std::cout << "criterion " << std::setw(2) << id << ": " << (o.pass ? "PASS" : "FAIL") << "  " << name << "  ["
              << o.detail << "]" << (!o.pass && known ? " (expected red)" : "")
              << (o.pass && known ? " (listed as expected red but passed)" : "") << "  " << fmt(secs, 3) << " s\n"
              << std::flush;
  }
  return unexpected ? 1 : 0;
}
