// SPDX-License-Identifier: Apache-2.0
#include "core/audit.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <set>

#include "core/attribution.hpp"
#include "core/pool.hpp"
#include "core/rng.hpp"
#include "core/utility.hpp"
#include "core/verifier.hpp"

namespace idsan {

double round_sig(double v, int digits) {
  if (v == 0.0 || !std::isfinite(v)) return v;
  const double mag = std::pow(10.0, digits - 1 - static_cast<int>(std::floor(
                                                     std::log10(std::abs(v)))));
  return std::round(v * mag) / mag;
}

std::string iso_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string dump_report(const nlohmann::json& report) {
  return report.dump(2) + "\n";
}

int auto_quota(int identity_count, int requested) {
  if (requested > 0) return requested;
  if (identity_count < 2) return 1;
  constexpr double kTargetTotal = 6320.0;  // 80 * 79
  return std::max(
      1, static_cast<int>(std::ceil(
             kTargetTotal / (double(identity_count) * (identity_count - 1)))));
}

namespace {

// seed derivation tags for pipeline stages
constexpr std::uint64_t kTagSplit = 0x10;
constexpr std::uint64_t kTagValPairs = 0x20;
constexpr std::uint64_t kTagTestPairs = 0x30;
constexpr std::uint64_t kTagEval = 0x40;
constexpr std::uint64_t kTagMlp = 0x50;

nlohmann::json json_op(const OperatingPoint& op) {
  nlohmann::json j;
  j["tau"] = round_sig(op.tau);
  j["target_far"] = round_sig(op.target_far);
  j["achieved_far"] = round_sig(op.achieved_far);
  j["false_accepts"] = op.false_accepts;
  j["impostor_count"] = op.impostor_count;
  j["mode"] = op_mode_name(op.mode);
  j["calibrated_on"] = op.calibrated_on;
  return j;
}

nlohmann::json json_metric(const MetricResult& m) {
  nlohmann::json j;
  j["mean"] = round_sig(m.mean);
  j["ci_low"] = round_sig(m.ci_low);
  j["ci_high"] = round_sig(m.ci_high);
  j["ci_defined"] = m.ci_defined;
  j["seeds"] = m.seeds;
  j["ci_method"] =
      m.method == CiMethod::StudentT ? "student-t" : "bootstrap";
  nlohmann::json per = nlohmann::json::array();
  for (double v : m.per_seed) per.push_back(round_sig(v));
  j["per_seed"] = std::move(per);
  return j;
}

struct Hygiene {
  std::int64_t support_in_eval_pairs = 0;
  std::int64_t probe_fit_identity_overlap = 0;
  bool tau_frozen_before_test = false;
};

nlohmann::json json_hygiene(const Hygiene& h) {
  nlohmann::json j;
  j["support_in_eval_pairs"] = h.support_in_eval_pairs;
  j["probe_fit_identity_overlap"] = h.probe_fit_identity_overlap;
  j["tau_frozen_before_test"] = h.tau_frozen_before_test;
  return j;
}

struct SeedEval {
  std::uint64_t seed_index = 0;
  TarResult tar;
  std::int64_t zero_projections = 0;
};

// One evaluated k cell: frozen probe + threshold, per-seed test results.
struct KCell {
  int k = 0;
  double alpha = 0.0;   // chosen ridge strength (ridge probe only)
  double val_tar = 0.0;
  OperatingPoint op;
  std::vector<SeedEval> evals;
  MetricResult tar;
  double min_measurable_far = 0.0;
  std::int64_t mated_pairs = 0;
  std::int64_t impostor_pairs = 0;
  Hygiene hygiene;
};

nlohmann::json json_kcell(const KCell& c) {
  nlohmann::json j;
  j["k"] = c.k;
  j["alpha"] = round_sig(c.alpha);
  j["val_tar"] = round_sig(c.val_tar);
  j["operating_point"] = json_op(c.op);
  j["tar"] = json_metric(c.tar);
  j["min_measurable_far"] = round_sig(c.min_measurable_far);
  j["pair_counts"] = {{"mated", c.mated_pairs}, {"impostor", c.impostor_pairs}};
  nlohmann::json seeds = nlohmann::json::array();
  for (const auto& e : c.evals) {
    nlohmann::json s;
    s["seed_index"] = e.seed_index;
    s["tar"] = round_sig(e.tar.tar);
    s["true_accepts"] = e.tar.true_accepts;
    s["mated_count"] = e.tar.mated_count;
    s["far"] = round_sig(e.tar.far);
    s["false_accepts"] = e.tar.false_accepts;
    s["impostor_count"] = e.tar.impostor_count;
    s["zero_projections"] = e.zero_projections;
    seeds.push_back(std::move(s));
  }
  j["per_seed"] = std::move(seeds);
  j["hygiene"] = json_hygiene(c.hygiene);
  return j;
}

std::unique_ptr<Probe> fit_probe_for(const EmbeddingSet& set,
                                     const SupportQuerySplit& sq,
                                     const ProbeParams& params, int k,
                                     double alpha) {
  if (params.probe == "ridge") {
    auto p = std::make_unique<RidgeProbe>();
    *p = fit_ridge_probe(set, sq, alpha);
    return p;
  }
  if (params.probe == "mlp") {
    MlpConfig cfg;
    cfg.hidden = params.mlp_hidden;
    cfg.epochs = params.mlp_epochs;
    cfg.batch = params.mlp_batch;
    cfg.out_dim = params.mlp_out_dim;
    cfg.learning_rate = params.mlp_lr;
    cfg.seed = mix_keys({params.seed, kTagMlp, static_cast<std::uint64_t>(k)});
    auto p = std::make_unique<MlpProbe>();
    *p = fit_mlp_probe(set, sq, cfg);
    return p;
  }
  fail(Err::InvalidArgument, "unknown probe kind: " + params.probe);
}

// Evaluates one k on an already-projected set.
KCell eval_k(const EmbeddingSet& set, const ProbeParams& params, int k) {
  KCell cell;
  cell.k = k;

  const std::uint64_t split_seed =
      mix_keys({params.seed, kTagSplit, static_cast<std::uint64_t>(k)});
  SupportQuerySplit sq = make_support_query_split(set, k, split_seed);

  const std::vector<int> val_ids = set.identities_in(Split::Val);
  const std::vector<int> test_ids = set.identities_in(Split::Test);
  if (val_ids.empty() || test_ids.empty())
    fail(Err::InvalidArgument, "probe protocol needs val and test identities");
  const int vquota = auto_quota(static_cast<int>(val_ids.size()), params.quota);
  const int tquota = auto_quota(static_cast<int>(test_ids.size()), params.quota);

  PairSet val_pairs = build_pairs(
      set, Split::Val, sq, vquota,
      mix_keys({params.seed, kTagValPairs, static_cast<std::uint64_t>(k)}));

  // probe fitting; the ridge regularization strength is swept on validation
  std::unique_ptr<Probe> probe;
  if (params.probe == "ridge") {
    double best_alpha = params.alpha_grid.empty() ? 1e-3 : params.alpha_grid[0];
    double best_tar = -1.0;
    std::unique_ptr<Probe> best_probe;
    OperatingPoint best_op;
    for (double alpha : params.alpha_grid) {
      auto cand = fit_probe_for(set, sq, params, k, alpha);
      PairScores scores = score_pairs(*cand, set, val_pairs);
      OperatingPoint op =
          calibrate_threshold(scores.mated, scores.impostor, params.far_target);
      const double tar = tar_at_far(scores.mated, scores.impostor, op).tar;
      if (tar > best_tar) {
        best_tar = tar;
        best_alpha = alpha;
        best_probe = std::move(cand);
        best_op = op;
      }
    }
    probe = std::move(best_probe);
    cell.alpha = best_alpha;
    cell.val_tar = best_tar;
    cell.op = best_op;
  } else {
    probe = fit_probe_for(set, sq, params, k, 0.0);
    PairScores scores = score_pairs(*probe, set, val_pairs);
    cell.op =
        calibrate_threshold(scores.mated, scores.impostor, params.far_target);
    cell.val_tar = tar_at_far(scores.mated, scores.impostor, cell.op).tar;
  }
  cell.hygiene.tau_frozen_before_test = true;  // set before any test scoring

  // fit-identity overlap audit
  {
    std::set<int> fit(probe->fit_identities().begin(),
                      probe->fit_identities().end());
    for (int i : val_ids) cell.hygiene.probe_fit_identity_overlap += fit.count(i);
    for (int i : test_ids) cell.hygiene.probe_fit_identity_overlap += fit.count(i);
  }
  cell.hygiene.support_in_eval_pairs += count_support_leaks(val_pairs, sq);

  cell.evals.resize(static_cast<std::size_t>(params.seeds));
  std::vector<std::int64_t> leak_counts(static_cast<std::size_t>(params.seeds));
  parallel_for(
      static_cast<std::size_t>(params.seeds), params.threads,
      [&](std::size_t e) {
        SupportQuerySplit sq_e = resample_identities(
            set, sq, test_ids,
            mix_keys({params.seed, kTagEval, static_cast<std::uint64_t>(k),
                      static_cast<std::uint64_t>(e)}));
        PairSet test_pairs = build_pairs(
            set, Split::Test, sq_e, tquota,
            mix_keys({params.seed, kTagTestPairs,
                      static_cast<std::uint64_t>(k),
                      static_cast<std::uint64_t>(e)}));
        leak_counts[e] = count_support_leaks(test_pairs, sq_e);
        PairScores scores = score_pairs(*probe, set, test_pairs);
        SeedEval ev;
        ev.seed_index = e;
        ev.tar = tar_at_far(scores.mated, scores.impostor, cell.op);
        ev.zero_projections = scores.zero_projections;
        cell.evals[e] = std::move(ev);
      });
  for (auto c : leak_counts) cell.hygiene.support_in_eval_pairs += c;

  std::vector<double> tars;
  tars.reserve(cell.evals.size());
  for (const auto& e : cell.evals) tars.push_back(e.tar.tar);
  cell.tar = seed_aggregate(tars, params.ci_method,
                            mix_keys({params.seed, rngtag::kBootstrap,
                                      static_cast<std::uint64_t>(k)}));
  if (!cell.evals.empty()) {
    cell.min_measurable_far = cell.evals[0].tar.min_measurable_far;
    cell.mated_pairs = cell.evals[0].tar.mated_count;
    cell.impostor_pairs = cell.evals[0].tar.impostor_count;
  }
  return cell;
}

nlohmann::json json_projection(const ProbeParams& params) {
  nlohmann::json j;
  j["kind"] = params.project;
  if (params.project == "isp") {
    j["rank"] = params.rank;
    j["whiten"] = params.whiten;
  } else if (params.project == "leace") {
    j["lambda"] = round_sig(params.lambda);
  }
  return j;
}

nlohmann::json json_config(const ProbeParams& params) {
  nlohmann::json j;
  j["dataset_tag"] = params.dataset_tag;
  j["model_tag"] = params.model_tag;
  j["probe"] = params.probe;
  j["projection"] = json_projection(params);
  j["k_grid"] = params.k_grid;
  j["seeds"] = params.seeds;
  j["far_target"] = round_sig(params.far_target);
  j["quota"] = params.quota;
  j["seed"] = params.seed;
  nlohmann::json ag = nlohmann::json::array();
  for (double a : params.alpha_grid) ag.push_back(round_sig(a));
  j["alpha_grid"] = std::move(ag);
  return j;
}

EmbeddingSet ensure_normalized(const EmbeddingSet& set, bool* did) {
  if (set.normalized) {
    if (did) *did = false;
    return set;
  }
  if (did) *did = true;
  return normalize(set);
}

// Fits the requested projector on the train split and applies its exported
// (32-bit) form, so pipeline results match a save/load/apply round trip.
EmbeddingSet project_for_probe(const EmbeddingSet& set,
                               const ProbeParams& params,
                               nlohmann::json* projection_info) {
  if (params.project == "none") return set;
  if (params.project == "isp") {
    IspOptions opts;
    opts.whiten = params.whiten;
    opts.provenance = params.dataset_tag;
    IspModel model = fit_isp(set, params.rank, opts);
    if (projection_info) {
      (*projection_info)["fit_identity_count"] = model.fit_identity_count;
      (*projection_info)["top_singular_value"] =
          round_sig(model.singular_values.size() ? model.singular_values(0)
                                                 : 0.0);
    }
    return apply_isp(model.quantized(), set);
  }
  if (params.project == "leace") {
    LeaceModel model = fit_leace(set, params.lambda, params.dataset_tag);
    if (projection_info)
      (*projection_info)["class_count"] = model.class_count;
    return apply_leace(model.quantized(), set, true);
  }
  fail(Err::InvalidArgument, "unknown projection kind: " + params.project);
}

nlohmann::json base_report(const char* command, const ProbeParams& params) {
  nlohmann::json r;
  r["format_version"] = 1;
  r["command"] = command;
  r["timestamp"] = iso_timestamp();
  r["config"] = json_config(params);
  return r;
}

nlohmann::json probe_cells(const EmbeddingSet& projected,
                           const ProbeParams& params, Hygiene* agg) {
  nlohmann::json cells = nlohmann::json::array();
  for (int k : params.k_grid) {
    KCell cell = eval_k(projected, params, k);
    if (agg) {
      agg->support_in_eval_pairs += cell.hygiene.support_in_eval_pairs;
      agg->probe_fit_identity_overlap += cell.hygiene.probe_fit_identity_overlap;
      agg->tau_frozen_before_test =
          agg->tau_frozen_before_test && cell.hygiene.tau_frozen_before_test;
    }
    cells.push_back(json_kcell(cell));
  }
  return cells;
}

}  // namespace

nlohmann::json run_probe(const EmbeddingSet& set, const ProbeParams& params) {
  bool renormalized = false;
  EmbeddingSet base = ensure_normalized(set, &renormalized);
  nlohmann::json report = base_report("probe", params);
  report["normalized_on_load"] = renormalized;
  nlohmann::json projection_info;
  EmbeddingSet projected = project_for_probe(base, params, &projection_info);
  if (!projection_info.is_null()) report["projection_fit"] = projection_info;

  Hygiene agg;
  agg.tau_frozen_before_test = true;
  report["results"] = probe_cells(projected, params, &agg);
  report["hygiene"] = json_hygiene(agg);
  report["tau_frozen_before_test"] = agg.tau_frozen_before_test;
  return report;
}

nlohmann::json run_sweep_rank(const EmbeddingSet& set,
                              const ProbeParams& params,
                              const std::vector<int>& ranks) {
  bool renormalized = false;
  EmbeddingSet base = ensure_normalized(set, &renormalized);
  nlohmann::json report = base_report("sweep-rank", params);
  report["normalized_on_load"] = renormalized;
  report["rank_grid"] = ranks;

  nlohmann::json cells = nlohmann::json::array();
  for (int r : ranks) {
    nlohmann::json cell;
    cell["rank"] = r;
    ProbeParams cell_params = params;
    if (r == 0) {
      cell_params.project = "none";  // raw baseline
    } else {
      cell_params.project = "isp";
      cell_params.rank = r;
    }
    try {
      EmbeddingSet projected = project_for_probe(base, cell_params, nullptr);
      cell["status"] = "ok";
      cell["results"] = probe_cells(projected, cell_params, nullptr);
    } catch (const Error& e) {
      if (e.code() != Err::RankDeficient) throw;
      cell["status"] = "rank-deficient";
      cell["max_rank"] = e.info();
    }
    cells.push_back(std::move(cell));
  }
  report["cells"] = std::move(cells);
  return report;
}

nlohmann::json run_sweep_identities(const EmbeddingSet& set,
                                    const ProbeParams& params,
                                    const std::vector<int>& counts) {
  bool renormalized = false;
  EmbeddingSet base = ensure_normalized(set, &renormalized);
  nlohmann::json report = base_report("sweep-identities", params);
  report["normalized_on_load"] = renormalized;
  report["identity_grid"] = counts;
  const std::vector<int> train_ids = base.identities_in(Split::Train);

  nlohmann::json cells = nlohmann::json::array();
  for (int m : counts) {
    nlohmann::json cell;
    cell["fit_identities"] = m;
    if (m < 2 || m > static_cast<int>(train_ids.size())) {
      cell["status"] = "insufficient-identities";
      cell["available"] = train_ids.size();
      cells.push_back(std::move(cell));
      continue;
    }
    std::vector<int> pool(train_ids.begin(), train_ids.begin() + m);
    EmbeddingSet fit_set = subset_identities(base, pool);
    try {
      IspOptions opts;
      opts.whiten = params.whiten;
      opts.provenance = params.dataset_tag;
      IspModel model = fit_isp(fit_set, params.rank, opts);
      EmbeddingSet projected = apply_isp(model.quantized(), base);
      cell["status"] = "ok";
      cell["results"] = probe_cells(projected, params, nullptr);
    } catch (const Error& e) {
      if (e.code() != Err::RankDeficient) throw;
      cell["status"] = "rank-deficient";
      cell["max_rank"] = e.info();
    }
    cells.push_back(std::move(cell));
  }
  report["cells"] = std::move(cells);
  return report;
}

nlohmann::json run_transfer(const EmbeddingSet& a, const EmbeddingSet& b,
                            const ProbeParams& params) {
  if (a.dim != b.dim) fail(Err::Dim, "embedding sets have different dims");
  if (params.project != "isp" && params.project != "none")
    fail(Err::InvalidArgument, "transfer runs use the subspace projector");

  bool ra = false, rb = false;
  EmbeddingSet base_a = ensure_normalized(a, &ra);
  EmbeddingSet base_b = ensure_normalized(b, &rb);

  IspOptions opts;
  opts.whiten = params.whiten;
  IspModel fit_a = fit_isp(base_a, params.rank, opts);
  IspModel fit_b = fit_isp(base_b, params.rank, opts);

  nlohmann::json report = base_report("transfer", params);
  SubspaceAlignment align = principal_angles(fit_a.basis, fit_b.basis);
  nlohmann::json cos = nlohmann::json::array();
  for (Eigen::Index i = 0; i < align.cosines.size(); ++i)
    cos.push_back(round_sig(align.cosines(i)));
  report["principal_angle_cosines"] = std::move(cos);
  report["max_principal_cosine"] =
      round_sig(align.cosines.size() ? align.cosines(0) : 0.0);

  // 2x2 matrix: within-dataset cells are ISP-W, cross cells ISP-X
  nlohmann::json cells = nlohmann::json::array();
  struct CellSpec {
    const char* fit;
    const char* eval;
    const char* label;
    const IspModel* model;
    const EmbeddingSet* set;
  };
  const CellSpec specs[] = {
      {"a", "a", "ISP-W", &fit_a, &base_a},
      {"b", "b", "ISP-W", &fit_b, &base_b},
      {"a", "b", "ISP-X", &fit_a, &base_b},
      {"b", "a", "ISP-X", &fit_b, &base_a},
  };
  for (const auto& spec : specs) {
    nlohmann::json cell;
    cell["fit_on"] = spec.fit;
    cell["eval_on"] = spec.eval;
    cell["label"] = spec.label;
    EmbeddingSet projected = apply_isp(spec.model->quantized(), *spec.set);
    cell["results"] = probe_cells(projected, params, nullptr);
    cells.push_back(std::move(cell));
  }
  report["cells"] = std::move(cells);
  return report;
}

namespace {

Eigen::VectorXd row_vec(const EmbeddingSet& set, int row) {
  if (row < 0 || row >= set.count)
    fail(Err::Metadata, "attribution record references row " +
                            std::to_string(row) + " outside the set");
  return set.vectors.row(row).cast<double>().transpose();
}

}  // namespace

nlohmann::json run_attrib(const EmbeddingSet& variants,
                          const AttribParams& params) {
  if (!variants.extra.contains("attribution"))
    fail(Err::Metadata, "embedding sidecar has no attribution block");
  const nlohmann::json& blk = variants.extra["attribution"];

  nlohmann::json report;
  report["format_version"] = 1;
  report["command"] = "attrib";
  report["timestamp"] = iso_timestamp();
  report["config"] = {{"bootstrap_seed", params.bootstrap_seed},
                      {"bootstrap_resamples", params.bootstrap_resamples}};

  if (blk.contains("occlusion_pairs")) {
    std::vector<OcclusionPair> pairs;
    for (const auto& rec : blk["occlusion_pairs"]) {
      OcclusionPair p;
      p.query = row_vec(variants, rec.at("query").get<int>());
      p.reference = row_vec(variants, rec.at("reference").get<int>());
      p.query_face_occ = row_vec(variants, rec.at("query_face_occ").get<int>());
      p.reference_face_occ =
          row_vec(variants, rec.at("reference_face_occ").get<int>());
      p.query_bg_occ = row_vec(variants, rec.at("query_bg_occ").get<int>());
      p.reference_bg_occ =
          row_vec(variants, rec.at("reference_bg_occ").get<int>());
      pairs.push_back(std::move(p));
    }
    FiiResult r =
        fii(pairs, params.bootstrap_seed, params.bootstrap_resamples);
    nlohmann::json j;
    j["mean"] = round_sig(r.mean);
    j["ci_low"] = round_sig(r.ci_low);
    j["ci_high"] = round_sig(r.ci_high);
    j["pairs"] = pairs.size();
    report["fii"] = std::move(j);
  }

  if (blk.contains("blur_triplets")) {
    const auto& tj = blk["blur_triplets"];
    std::vector<double> levels = tj.at("levels").get<std::vector<double>>();
    std::vector<BlurTriplet> triplets;
    for (const auto& rec : tj.at("triplets")) {
      BlurTriplet t;
      for (int row : rec.at("query").get<std::vector<int>>())
        t.query.push_back(row_vec(variants, row));
      for (int row : rec.at("id_ref").get<std::vector<int>>())
        t.id_ref.push_back(row_vec(variants, row));
      for (int row : rec.at("ctx_ref").get<std::vector<int>>())
        t.ctx_ref.push_back(row_vec(variants, row));
      triplets.push_back(std::move(t));
    }
    CpiCurve curve = cpi_curve(triplets, levels);
    nlohmann::json j;
    nlohmann::json lv = nlohmann::json::array(), cv = nlohmann::json::array();
    for (double l : curve.levels) lv.push_back(round_sig(l));
    for (double c : curve.cpi) cv.push_back(round_sig(c));
    j["levels"] = std::move(lv);
    j["cpi"] = std::move(cv);
    j["delta_cpi"] = round_sig(curve.delta);
    if (curve.sigma_star)
      j["sigma_star"] = round_sig(*curve.sigma_star);
    else
      j["sigma_star"] = nullptr;
    j["triplets"] = triplets.size();
    report["cpi"] = std::move(j);
  }

  if (blk.contains("reveal_triplets")) {
    const auto& tj = blk["reveal_triplets"];
    std::vector<double> levels = tj.at("levels").get<std::vector<double>>();
    std::vector<RevealTriplet> triplets;
    for (const auto& rec : tj.at("triplets")) {
      RevealTriplet t;
      for (int row : rec.at("query").get<std::vector<int>>())
        t.query.push_back(row_vec(variants, row));
      t.id_ref = row_vec(variants, rec.at("id_ref").get<int>());
      t.ctx_ref = row_vec(variants, rec.at("ctx_ref").get<int>());
      triplets.push_back(std::move(t));
    }
    BStarResult r = b_star(triplets, levels);
    nlohmann::json j;
    j["median"] = round_sig(r.median);
    j["censored_low"] = r.censored_low;
    j["censored_high"] = r.censored_high;
    j["monotone_fraction"] = round_sig(r.monotone_fraction);
    nlohmann::json per = nlohmann::json::array();
    for (double v : r.per_triplet) per.push_back(round_sig(v));
    j["per_triplet"] = std::move(per);
    j["triplets"] = triplets.size();
    report["b_star"] = std::move(j);
  }
  return report;
}

nlohmann::json run_utility(const EmbeddingSet& train, const EmbeddingSet& test,
                           const std::optional<Projector>& projector,
                           const UtilityParams& params) {
  if (train.task_labels.empty() || test.task_labels.empty())
    fail(Err::Metadata, "utility runs need the task-label sidecar channel");

  nlohmann::json report;
  report["format_version"] = 1;
  report["command"] = "utility";
  report["timestamp"] = iso_timestamp();
  report["config"] = {{"knn_k", params.knn_k},
                      {"alpha", round_sig(params.alpha)},
                      {"recall_ks", params.recall_ks},
                      {"projector", projector ? projector_kind(*projector)
                                              : "none"}};

  EmbeddingSet train_n = train.normalized ? train : normalize(train);
  EmbeddingSet test_n = test.normalized ? test : normalize(test);

  std::optional<EmbeddingSet> train_p, test_p;
  if (projector) {
    Projector q = *projector;
    if (auto* isp = std::get_if<IspModel>(&q)) {
      IspModel qq = isp->quantized();
      train_p = apply_isp(qq, train_n);
      test_p = apply_isp(qq, test_n);
    } else {
      LeaceModel qq = std::get<LeaceModel>(q).quantized();
      train_p = apply_leace(qq, train_n, true);
      test_p = apply_leace(qq, test_n, true);
    }
  }

  auto metric_block = [&](const char* name, auto&& fn) {
    nlohmann::json j;
    const double raw = fn(train_n, test_n);
    j["raw"] = round_sig(raw);
    if (train_p) {
      const double proj = fn(*train_p, *test_p);
      j["projected"] = round_sig(proj);
      j["retention"] = round_sig(retention(raw, proj));
    }
    report[name] = std::move(j);
  };

  metric_block("knn_top1", [&](const EmbeddingSet& tr, const EmbeddingSet& te) {
    return knn_top1(tr, tr.task_labels, te, te.task_labels, params.knn_k);
  });
  metric_block("linear_probe_top1",
               [&](const EmbeddingSet& tr, const EmbeddingSet& te) {
                 return linear_probe_top1(tr, tr.task_labels, te,
                                          te.task_labels, params.alpha);
               });

  if (!params.truth_path.empty()) {
    std::ifstream in(params.truth_path);
    if (!in) fail(Err::Io, "cannot open: " + params.truth_path);
    nlohmann::json tj;
    try {
      tj = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      fail(Err::MissingTruth, std::string("bad ground-truth JSON: ") + e.what());
    }
    std::map<int, std::vector<int>> truth;
    for (const auto& entry : tj)
      truth[entry.at(0).get<int>()].push_back(entry.at(1).get<int>());

    nlohmann::json recall;
    for (int k : params.recall_ks) {
      nlohmann::json j;
      const double raw = recall_at_k(test_n, train_n, truth, k);
      j["raw"] = round_sig(raw);
      if (train_p) {
        const double proj = recall_at_k(*test_p, *train_p, truth, k);
        j["projected"] = round_sig(proj);
        j["retention"] = round_sig(retention(raw, proj));
      }
      recall["k" + std::to_string(k)] = std::move(j);
    }
    report["recall"] = std::move(recall);
  }
  return report;
}

}  // namespace idsan
