// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end for the idsan shared library. Every subcommand is
// a thin wrapper over the C API: parse flags, run, write the JSON report to
// --out (or stdout). Exit codes: 0 success, 1 usage, 2 data, 3 numerical.

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "idsan.h"

namespace {

int report_failure(int code) {
  std::cerr << "error: " << idsan_last_error() << "\n";
  return idsan_error_class(code);
}

struct EmbHandle {
  idsan_embeddings* ptr = nullptr;
  ~EmbHandle() { idsan_embeddings_free(ptr); }
};

struct ProjHandle {
  idsan_projector* ptr = nullptr;
  ~ProjHandle() { idsan_projector_free(ptr); }
};

int load_emb(const std::string& path, EmbHandle& h) {
  return idsan_embeddings_load(path.c_str(), &h.ptr);
}

int write_report(char* json, const std::string& out_path) {
  std::unique_ptr<char, decltype(&idsan_string_free)> guard(json,
                                                            idsan_string_free);
  if (out_path.empty()) {
    std::cout << json;
    return 0;
  }
  std::ofstream out(out_path, std::ios::trunc);
  if (!out) {
    std::cerr << "error: cannot write " << out_path << "\n";
    return 2;
  }
  out << json;
  return 0;
}

struct ProbeFlags {
  std::string emb;
  std::string emb_b;
  std::string probe = "ridge";
  std::string project = "none";
  int rank = 192;
  double lambda = 1e-4;
  bool whiten = false;
  std::vector<int> k_grid;
  int seeds = 5;
  double far = 1e-4;
  int quota = 0;
  std::uint64_t seed = 1;
  std::string out;
  std::string dataset_tag;
  std::string model_tag;
  bool bootstrap_ci = false;
  int mlp_hidden = 512;
  int mlp_epochs = 50;
};

void add_probe_flags(CLI::App* cmd, ProbeFlags& f, bool with_emb_b) {
  cmd->add_option("--emb", f.emb, "embedding file (EMB1 + sidecar)")
      ->required();
  if (with_emb_b)
    cmd->add_option("--emb-b", f.emb_b, "second embedding file")->required();
  cmd->add_option("--probe", f.probe, "probe family")
      ->check(CLI::IsMember({"ridge", "mlp"}));
  cmd->add_option("--project", f.project, "sanitization applied before probing")
      ->check(CLI::IsMember({"none", "isp", "leace"}));
  cmd->add_option("--rank", f.rank, "subspace rank");
  cmd->add_option("--lambda", f.lambda, "erasure ridge strength");
  cmd->add_flag("--whiten", f.whiten, "whitened subspace variant");
  cmd->add_option("--k", f.k_grid, "support sizes to evaluate");
  cmd->add_option("--seeds", f.seeds, "evaluation resampling seeds");
  cmd->add_option("--far", f.far, "FAR target for threshold calibration");
  cmd->add_option("--quota", f.quota,
                  "impostor pairs per ordered identity pair (0 = auto)");
  cmd->add_option("--seed", f.seed, "master seed");
  cmd->add_option("--out", f.out, "report path (default stdout)");
  cmd->add_option("--dataset-tag", f.dataset_tag, "dataset label for the report");
  cmd->add_option("--model-tag", f.model_tag, "encoder label for the report");
  cmd->add_flag("--bootstrap-ci", f.bootstrap_ci,
                "bootstrap seed interval instead of Student-t");
  cmd->add_option("--mlp-hidden", f.mlp_hidden, "MLP hidden width");
  cmd->add_option("--mlp-epochs", f.mlp_epochs, "MLP training epochs");
}

idsan_probe_params to_params(const ProbeFlags& f,
                             std::vector<std::int32_t>& k_storage) {
  idsan_probe_params p;
  idsan_probe_params_init(&p);
  p.probe = f.probe.c_str();
  p.project = f.project.c_str();
  p.rank = f.rank;
  p.lambda = f.lambda;
  p.whiten = f.whiten ? 1 : 0;
  k_storage.assign(f.k_grid.begin(), f.k_grid.end());
  if (!k_storage.empty()) {
    p.k_grid = k_storage.data();
    p.k_count = k_storage.size();
  }
  p.seeds = f.seeds;
  p.far_target = f.far;
  p.quota = f.quota;
  p.seed = f.seed;
  p.dataset_tag = f.dataset_tag.c_str();
  p.model_tag = f.model_tag.c_str();
  p.bootstrap_ci = f.bootstrap_ci ? 1 : 0;
  p.mlp_hidden = f.mlp_hidden;
  p.mlp_epochs = f.mlp_epochs;
  return p;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"identity-leakage audit and sanitization for frozen embeddings"};
  app.require_subcommand(1);

  // probe
  ProbeFlags probe_f;
  auto* probe_cmd =
      app.add_subcommand("probe", "open-set verification probe protocol");
  add_probe_flags(probe_cmd, probe_f, false);

  // sweep-rank
  ProbeFlags swr_f;
  std::vector<int> rank_grid;
  auto* swr_cmd =
      app.add_subcommand("sweep-rank", "verification across subspace ranks");
  add_probe_flags(swr_cmd, swr_f, false);
  swr_cmd->add_option("--ranks", rank_grid,
                      "rank grid (0 = raw baseline; default 0 64 96 128 192)");

  // sweep-ids
  ProbeFlags swi_f;
  std::vector<int> id_grid;
  auto* swi_cmd = app.add_subcommand(
      "sweep-ids", "verification across identity-pool sizes");
  add_probe_flags(swi_cmd, swi_f, false);
  swi_cmd->add_option("--identity-counts", id_grid,
                      "fit-pool sizes (default 320 640 1280 2000)");

  // transfer
  ProbeFlags tr_f;
  auto* tr_cmd = app.add_subcommand(
      "transfer", "2x2 cross-dataset projector transfer matrix");
  add_probe_flags(tr_cmd, tr_f, true);

  // attrib
  std::string at_emb, at_out;
  std::uint64_t at_seed = 0;
  int at_resamples = 2000;
  auto* at_cmd = app.add_subcommand(
      "attrib", "face-context attribution from variant embeddings");
  at_cmd->add_option("--emb", at_emb, "variant embedding file")->required();
  at_cmd->add_option("--seed", at_seed, "bootstrap seed");
  at_cmd->add_option("--resamples", at_resamples, "bootstrap resamples");
  at_cmd->add_option("--out", at_out, "report path (default stdout)");

  // utility
  std::string ut_emb, ut_emb_b, ut_proj, ut_truth, ut_out;
  int ut_knn_k = 20;
  double ut_alpha = 1e-3;
  std::vector<int> ut_recall_ks;
  auto* ut_cmd =
      app.add_subcommand("utility", "task utility retention after projection");
  ut_cmd->add_option("--emb", ut_emb, "task-train embedding file")->required();
  ut_cmd->add_option("--emb-b", ut_emb_b, "task-test embedding file")
      ->required();
  ut_cmd->add_option("--projector", ut_proj, "saved projector to compare");
  ut_cmd->add_option("--truth", ut_truth,
                     "retrieval ground truth (JSON [query, gallery] pairs)");
  ut_cmd->add_option("--knn-k", ut_knn_k, "neighbors for the k-NN vote");
  ut_cmd->add_option("--alpha", ut_alpha, "linear probe ridge strength");
  ut_cmd->add_option("--recall-ks", ut_recall_ks, "recall@k grid");
  ut_cmd->add_option("--out", ut_out, "report path (default stdout)");

  // synth
  std::string sy_out;
  idsan_synth_params sy;
  idsan_synth_params_init(&sy);
  std::uint64_t sy_seed = sy.seed, sy_subspace = sy.subspace_seed;
  auto* sy_cmd = app.add_subcommand(
      "synth", "generate a planted-subspace embedding set");
  sy_cmd->add_option("--out", sy_out, "output EMB1 path")->required();
  sy_cmd->add_option("--dim", sy.dim, "embedding dimension");
  sy_cmd->add_option("--identities", sy.identities, "identity count");
  sy_cmd->add_option("--images-per-id", sy.images_per_identity,
                     "images per identity");
  sy_cmd->add_option("--identity-rank", sy.identity_rank,
                     "planted identity subspace rank");
  sy_cmd->add_option("--identity-scale", sy.identity_scale, "identity signal");
  sy_cmd->add_option("--noise-scale", sy.noise_scale, "within-identity noise");
  sy_cmd->add_option("--task-classes", sy.task_classes, "task class count");
  sy_cmd->add_option("--task-rank", sy.task_rank, "task subspace rank");
  sy_cmd->add_option("--task-scale", sy.task_scale, "task signal");
  sy_cmd->add_option("--train-ids", sy.train_identities, "train identities");
  sy_cmd->add_option("--val-ids", sy.val_identities, "val identities");
  sy_cmd->add_option("--test-ids", sy.test_identities, "test identities");
  sy_cmd->add_option("--seed", sy_seed, "draw seed");
  sy_cmd->add_option("--subspace-seed", sy_subspace,
                     "planted-model seed (shared across draws)");

  // fit
  std::string ft_emb, ft_out, ft_project = "isp", ft_tag;
  int ft_rank = 192;
  double ft_lambda = 1e-4;
  bool ft_whiten = false;
  auto* ft_cmd = app.add_subcommand("fit", "fit a sanitization projector");
  ft_cmd->add_option("--emb", ft_emb, "embedding file")->required();
  ft_cmd->add_option("--project", ft_project, "projector kind")
      ->check(CLI::IsMember({"isp", "leace"}));
  ft_cmd->add_option("--rank", ft_rank, "subspace rank");
  ft_cmd->add_option("--lambda", ft_lambda, "erasure ridge strength");
  ft_cmd->add_flag("--whiten", ft_whiten, "whitened subspace variant");
  ft_cmd->add_option("--out", ft_out, "projector output path")->required();
  ft_cmd->add_option("--dataset-tag", ft_tag, "provenance tag");

  // apply
  std::string ap_emb, ap_proj, ap_out;
  auto* ap_cmd =
      app.add_subcommand("apply", "apply a saved projector to embeddings");
  ap_cmd->add_option("--emb", ap_emb, "embedding file")->required();
  ap_cmd->add_option("--projector", ap_proj, "saved projector")->required();
  ap_cmd->add_option("--out", ap_out, "output EMB1 path")->required();

  // angles
  std::string an_a, an_b, an_out;
  auto* an_cmd = app.add_subcommand(
      "angles", "principal angles between two fitted subspaces");
  an_cmd->add_option("--projector", an_a, "first projector")->required();
  an_cmd->add_option("--projector-b", an_b, "second projector")->required();
  an_cmd->add_option("--out", an_out, "report path (default stdout)");

  CLI11_PARSE(app, argc, argv);

  if (probe_cmd->parsed()) {
    EmbHandle emb;
    if (int rc = load_emb(probe_f.emb, emb)) return report_failure(rc);
    std::vector<std::int32_t> ks;
    idsan_probe_params p = to_params(probe_f, ks);
    char* json = nullptr;
    if (int rc = idsan_audit_probe(emb.ptr, &p, &json))
      return report_failure(rc);
    return write_report(json, probe_f.out);
  }

  if (swr_cmd->parsed()) {
    EmbHandle emb;
    if (int rc = load_emb(swr_f.emb, emb)) return report_failure(rc);
    std::vector<std::int32_t> ks;
    idsan_probe_params p = to_params(swr_f, ks);
    std::vector<std::int32_t> grid(rank_grid.begin(), rank_grid.end());
    char* json = nullptr;
    if (int rc = idsan_audit_sweep_rank(emb.ptr, &p, grid.data(), grid.size(),
                                        &json))
      return report_failure(rc);
    return write_report(json, swr_f.out);
  }

  if (swi_cmd->parsed()) {
    EmbHandle emb;
    if (int rc = load_emb(swi_f.emb, emb)) return report_failure(rc);
    std::vector<std::int32_t> ks;
    idsan_probe_params p = to_params(swi_f, ks);
    std::vector<std::int32_t> grid(id_grid.begin(), id_grid.end());
    char* json = nullptr;
    if (int rc = idsan_audit_sweep_identities(emb.ptr, &p, grid.data(),
                                              grid.size(), &json))
      return report_failure(rc);
    return write_report(json, swi_f.out);
  }

  if (tr_cmd->parsed()) {
    EmbHandle a, b;
    if (int rc = load_emb(tr_f.emb, a)) return report_failure(rc);
    if (int rc = load_emb(tr_f.emb_b, b)) return report_failure(rc);
    std::vector<std::int32_t> ks;
    idsan_probe_params p = to_params(tr_f, ks);
    if (tr_f.project == "none") p.project = "isp";
    char* json = nullptr;
    if (int rc = idsan_audit_transfer(a.ptr, b.ptr, &p, &json))
      return report_failure(rc);
    return write_report(json, tr_f.out);
  }

  if (at_cmd->parsed()) {
    EmbHandle emb;
    if (int rc = load_emb(at_emb, emb)) return report_failure(rc);
    idsan_attrib_params p;
    idsan_attrib_params_init(&p);
    p.bootstrap_seed = at_seed;
    p.bootstrap_resamples = at_resamples;
    char* json = nullptr;
    if (int rc = idsan_audit_attrib(emb.ptr, &p, &json))
      return report_failure(rc);
    return write_report(json, at_out);
  }

  if (ut_cmd->parsed()) {
    EmbHandle train, test;
    if (int rc = load_emb(ut_emb, train)) return report_failure(rc);
    if (int rc = load_emb(ut_emb_b, test)) return report_failure(rc);
    ProjHandle proj;
    if (!ut_proj.empty())
      if (int rc = idsan_projector_load(ut_proj.c_str(), &proj.ptr))
        return report_failure(rc);
    idsan_utility_params p;
    idsan_utility_params_init(&p);
    p.knn_k = ut_knn_k;
    p.alpha = ut_alpha;
    if (!ut_truth.empty()) p.truth_path = ut_truth.c_str();
    std::vector<std::int32_t> rks(ut_recall_ks.begin(), ut_recall_ks.end());
    if (!rks.empty()) {
      p.recall_ks = rks.data();
      p.recall_k_count = rks.size();
    }
    char* json = nullptr;
    if (int rc = idsan_audit_utility(train.ptr, test.ptr, proj.ptr, &p, &json))
      return report_failure(rc);
    return write_report(json, ut_out);
  }

  if (sy_cmd->parsed()) {
    sy.seed = sy_seed;
    sy.subspace_seed = sy_subspace;
    EmbHandle set;
    ProjHandle planted;
    if (int rc = idsan_synth_generate(&sy, &set.ptr, &planted.ptr))
      return report_failure(rc);
    if (int rc = idsan_embeddings_save(set.ptr, sy_out.c_str()))
      return report_failure(rc);
    if (planted.ptr) {
      const std::string truth_path = sy_out + ".truth.proj";
      if (int rc = idsan_projector_save(planted.ptr, truth_path.c_str()))
        return report_failure(rc);
    }
    std::cerr << "wrote " << sy_out << " (" << idsan_embeddings_count(set.ptr)
              << " x " << idsan_embeddings_dim(set.ptr) << ")\n";
    return 0;
  }

  if (ft_cmd->parsed()) {
    EmbHandle emb;
    if (int rc = load_emb(ft_emb, emb)) return report_failure(rc);
    ProjHandle proj;
    int rc;
    if (ft_project == "isp")
      rc = idsan_fit_isp(emb.ptr, ft_rank, ft_whiten ? 1 : 0, ft_tag.c_str(),
                         &proj.ptr);
    else
      rc = idsan_fit_leace(emb.ptr, ft_lambda, ft_tag.c_str(), &proj.ptr);
    if (rc) return report_failure(rc);
    if ((rc = idsan_projector_save(proj.ptr, ft_out.c_str())))
      return report_failure(rc);
    std::cerr << "wrote " << ft_out << " (kind "
              << idsan_projector_kind(proj.ptr) << ", rank "
              << idsan_projector_rank(proj.ptr) << ")\n";
    return 0;
  }

  if (ap_cmd->parsed()) {
    EmbHandle emb, out;
    ProjHandle proj;
    if (int rc = load_emb(ap_emb, emb)) return report_failure(rc);
    if (int rc = idsan_projector_load(ap_proj.c_str(), &proj.ptr))
      return report_failure(rc);
    if (int rc = idsan_projector_apply(proj.ptr, emb.ptr, &out.ptr))
      return report_failure(rc);
    if (int rc = idsan_embeddings_save(out.ptr, ap_out.c_str()))
      return report_failure(rc);
    std::cerr << "wrote " << ap_out << "\n";
    return 0;
  }

  if (an_cmd->parsed()) {
    ProjHandle a, b;
    if (int rc = idsan_projector_load(an_a.c_str(), &a.ptr))
      return report_failure(rc);
    if (int rc = idsan_projector_load(an_b.c_str(), &b.ptr))
      return report_failure(rc);
    size_t len = 0;
    if (int rc = idsan_principal_angles(a.ptr, b.ptr, nullptr, 0, &len))
      return report_failure(rc);
    std::vector<double> cosines(len);
    if (int rc =
            idsan_principal_angles(a.ptr, b.ptr, cosines.data(), len, &len))
      return report_failure(rc);
    std::string json = "{\n  \"command\": \"angles\",\n  \"cosines\": [";
    char buf[32];
    for (size_t i = 0; i < cosines.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%.6g", cosines[i]);
      json += std::string(i ? ", " : "") + buf;
    }
    json += "],\n  \"max_cosine\": ";
    std::snprintf(buf, sizeof buf, "%.6g", cosines.empty() ? 0.0 : cosines[0]);
    json += buf;
    json += "\n}\n";
    char* heap = static_cast<char*>(std::malloc(json.size() + 1));
    std::memcpy(heap, json.c_str(), json.size() + 1);
    return write_report(heap, an_out);
  }

  return 1;
}
