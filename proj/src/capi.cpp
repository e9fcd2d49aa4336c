// SPDX-License-Identifier: Apache-2.0
#include "idsan.h"

#include <cstdlib>
#include <cstring>
#include <string>

#include "core/audit.hpp"
#include "core/common.hpp"
#include "core/embstore.hpp"
#include "core/projector.hpp"
#include "core/synth.hpp"

struct idsan_embeddings {
  idsan::EmbeddingSet set;
};

struct idsan_projector {
  idsan::Projector model;
  std::string kind;
};

namespace {

thread_local std::string g_last_error;

int to_code(idsan::Err e) { return static_cast<int>(e); }

template <typename Fn>
int guarded(Fn&& fn) {
  try {
    fn();
    return IDSAN_OK;
  } catch (const idsan::Error& e) {
    g_last_error = e.what();
    return to_code(e.code());
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return to_code(idsan::Err::Internal);
  } catch (...) {
    g_last_error = "unknown error";
    return to_code(idsan::Err::Internal);
  }
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

idsan::ProbeParams convert(const idsan_probe_params* p) {
  idsan::ProbeParams out;
  if (!p) return out;
  if (p->probe) out.probe = p->probe;
  if (p->project) out.project = p->project;
  out.rank = p->rank;
  out.lambda = p->lambda;
  out.whiten = p->whiten != 0;
  if (p->k_grid && p->k_count > 0)
    out.k_grid.assign(p->k_grid, p->k_grid + p->k_count);
  out.seeds = p->seeds;
  out.far_target = p->far_target;
  out.quota = p->quota;
  out.seed = p->seed;
  out.threads = p->threads;
  if (p->dataset_tag) out.dataset_tag = p->dataset_tag;
  if (p->model_tag) out.model_tag = p->model_tag;
  out.ci_method = p->bootstrap_ci ? idsan::CiMethod::Bootstrap
                                  : idsan::CiMethod::StudentT;
  out.mlp_hidden = p->mlp_hidden;
  out.mlp_epochs = p->mlp_epochs;
  out.mlp_batch = p->mlp_batch;
  out.mlp_out_dim = p->mlp_out_dim;
  out.mlp_lr = p->mlp_lr;
  return out;
}

}  // namespace

extern "C" {

int idsan_error_class(int code) {
  if (code == IDSAN_OK) return 0;
  return static_cast<int>(idsan::classify(static_cast<idsan::Err>(code)));
}

const char* idsan_version(void) { return "1.0.0"; }

const char* idsan_last_error(void) { return g_last_error.c_str(); }

void idsan_string_free(char* s) { std::free(s); }

int idsan_embeddings_load(const char* path, idsan_embeddings** out) {
  return guarded([&] {
    if (!path || !out) idsan::fail(idsan::Err::InvalidArgument, "null argument");
    *out = new idsan_embeddings{idsan::load_embeddings(path)};
  });
}

int idsan_embeddings_save(const idsan_embeddings* set, const char* path) {
  return guarded([&] {
    if (!set || !path) idsan::fail(idsan::Err::InvalidArgument, "null argument");
    idsan::save_embeddings(set->set, path);
  });
}

int idsan_embeddings_normalize(const idsan_embeddings* set,
                               idsan_embeddings** out) {
  return guarded([&] {
    if (!set || !out) idsan::fail(idsan::Err::InvalidArgument, "null argument");
    *out = new idsan_embeddings{idsan::normalize(set->set)};
  });
}

int idsan_embeddings_dim(const idsan_embeddings* set) {
  return set ? set->set.dim : 0;
}

int64_t idsan_embeddings_count(const idsan_embeddings* set) {
  return set ? set->set.count : 0;
}

int idsan_embeddings_identity_count(const idsan_embeddings* set) {
  return set ? set->set.identity_count() : 0;
}

void idsan_embeddings_free(idsan_embeddings* set) { delete set; }

void idsan_synth_params_init(idsan_synth_params* p) {
  if (!p) return;
  idsan::SynthConfig d;
  p->dim = d.dim;
  p->identities = d.identities;
  p->images_per_identity = d.images_per_identity;
  p->identity_rank = d.identity_rank;
  p->identity_scale = d.identity_scale;
  p->noise_scale = d.noise_scale;
  p->task_classes = d.task_classes;
  p->task_rank = d.task_rank;
  p->task_scale = d.task_scale;
  p->train_identities = d.train_identities;
  p->val_identities = d.val_identities;
  p->test_identities = d.test_identities;
  p->seed = d.seed;
  p->subspace_seed = d.subspace_seed;
  p->provenance = nullptr;
}

int idsan_synth_generate(const idsan_synth_params* p,
                         idsan_embeddings** out_set,
                         idsan_projector** out_planted) {
  return guarded([&] {
    if (!p || !out_set) idsan::fail(idsan::Err::InvalidArgument, "null argument");
    idsan::SynthConfig cfg;
    cfg.dim = p->dim;
    cfg.identities = p->identities;
    cfg.images_per_identity = p->images_per_identity;
    cfg.identity_rank = p->identity_rank;
    cfg.identity_scale = p->identity_scale;
    cfg.noise_scale = p->noise_scale;
    cfg.task_classes = p->task_classes;
    cfg.task_rank = p->task_rank;
    cfg.task_scale = p->task_scale;
    cfg.train_identities = p->train_identities;
    cfg.val_identities = p->val_identities;
    cfg.test_identities = p->test_identities;
    cfg.seed = p->seed;
    cfg.subspace_seed = p->subspace_seed;
    if (p->provenance) cfg.provenance = p->provenance;
    auto [set, truth] = idsan::generate(cfg);
    if (out_planted) {
      if (truth.identity_basis.cols() == 0) {
        *out_planted = nullptr;
      } else {
        idsan::IspModel planted;
        planted.dim = cfg.dim;
        planted.rank = static_cast<int>(truth.identity_basis.cols());
        planted.basis = truth.identity_basis;
        planted.global_mean = Eigen::VectorXd::Zero(cfg.dim);
        planted.singular_values = Eigen::VectorXd::Zero(planted.rank);
        planted.fit_identity_count = cfg.identities;
        planted.provenance = cfg.provenance + ":planted";
        *out_planted = new idsan_projector{idsan::Projector(planted), "isp"};
      }
    }
    *out_set = new idsan_embeddings{std::move(set)};
  });
}

int idsan_fit_isp(const idsan_embeddings* set, int rank, int whiten,
                  const char* provenance, idsan_projector** out) {
  return guarded([&] {
    if (!set || !out) idsan::fail(idsan::Err::InvalidArgument, "null argument");
    idsan::IspOptions opts;
    opts.whiten = whiten != 0;
    if (provenance) opts.provenance = provenance;
    *out = new idsan_projector{
        idsan::Projector(idsan::fit_isp(set->set, rank, opts)), "isp"};
  });
}

int idsan_fit_leace(const idsan_embeddings* set, double lambda,
                    const char* provenance, idsan_projector** out) {
  return guarded([&] {
    if (!set || !out) idsan::fail(idsan::Err::InvalidArgument, "null argument");
    *out = new idsan_projector{
        idsan::Projector(idsan::fit_leace(
            set->set, lambda, provenance ? provenance : "")),
        "leace"};
  });
}

int idsan_projector_apply(const idsan_projector* p, const idsan_embeddings* in,
                          idsan_embeddings** out) {
  return guarded([&] {
    if (!p || !in || !out)
      idsan::fail(idsan::Err::InvalidArgument, "null argument");
    // apply the exported 32-bit form so in-process and save/load paths agree
    idsan::Projector q = p->model;
    if (auto* isp = std::get_if<idsan::IspModel>(&q)) {
      *out = new idsan_embeddings{idsan::apply_isp(isp->quantized(), in->set)};
    } else {
      *out = new idsan_embeddings{idsan::apply_leace(
          std::get<idsan::LeaceModel>(q).quantized(), in->set, true)};
    }
  });
}

int idsan_projector_save(const idsan_projector* p, const char* path) {
  return guarded([&] {
    if (!p || !path) idsan::fail(idsan::Err::InvalidArgument, "null argument");
    idsan::save_projector(p->model, path);
  });
}

int idsan_projector_load(const char* path, idsan_projector** out) {
  return guarded([&] {
    if (!path || !out) idsan::fail(idsan::Err::InvalidArgument, "null argument");
    idsan::Projector m = idsan::load_projector(path);
    const char* kind = idsan::projector_kind(m);
    *out = new idsan_projector{std::move(m), kind};
  });
}

int idsan_projector_dim(const idsan_projector* p) {
  return p ? idsan::projector_dim(p->model) : 0;
}

int idsan_projector_rank(const idsan_projector* p) {
  return p ? idsan::projector_rank(p->model) : 0;
}

const char* idsan_projector_kind(const idsan_projector* p) {
  return p ? p->kind.c_str() : "";
}

void idsan_projector_free(idsan_projector* p) { delete p; }

int idsan_principal_angles(const idsan_projector* a, const idsan_projector* b,
                           double* cosines, size_t cap, size_t* out_len) {
  return guarded([&] {
    if (!a || !b) idsan::fail(idsan::Err::InvalidArgument, "null argument");
    const auto* ia = std::get_if<idsan::IspModel>(&a->model);
    const auto* ib = std::get_if<idsan::IspModel>(&b->model);
    if (!ia || !ib)
      idsan::fail(idsan::Err::InvalidArgument,
                  "principal angles need subspace projectors");
    idsan::SubspaceAlignment al = idsan::principal_angles(ia->basis, ib->basis);
    const auto n = static_cast<size_t>(al.cosines.size());
    if (out_len) *out_len = n;
    if (cosines)
      for (size_t i = 0; i < n && i < cap; ++i) cosines[i] = al.cosines(i);
  });
}

void idsan_probe_params_init(idsan_probe_params* p) {
  if (!p) return;
  idsan::ProbeParams d;
  p->probe = "ridge";
  p->project = "none";
  p->rank = d.rank;
  p->lambda = d.lambda;
  p->whiten = 0;
  p->k_grid = nullptr;
  p->k_count = 0;
  p->seeds = d.seeds;
  p->far_target = d.far_target;
  p->quota = d.quota;
  p->seed = d.seed;
  p->threads = d.threads;
  p->dataset_tag = nullptr;
  p->model_tag = nullptr;
  p->bootstrap_ci = 0;
  p->mlp_hidden = d.mlp_hidden;
  p->mlp_epochs = d.mlp_epochs;
  p->mlp_batch = d.mlp_batch;
  p->mlp_out_dim = d.mlp_out_dim;
  p->mlp_lr = d.mlp_lr;
}

int idsan_audit_probe(const idsan_embeddings* set, const idsan_probe_params* p,
                      char** report_json) {
  return guarded([&] {
    if (!set || !report_json)
      idsan::fail(idsan::Err::InvalidArgument, "null argument");
    *report_json =
        dup_string(idsan::dump_report(idsan::run_probe(set->set, convert(p))));
  });
}

int idsan_audit_sweep_rank(const idsan_embeddings* set,
                           const idsan_probe_params* p, const int32_t* ranks,
                           size_t n_ranks, char** report_json) {
  return guarded([&] {
    if (!set || !report_json || (!ranks && n_ranks))
      idsan::fail(idsan::Err::InvalidArgument, "null argument");
    std::vector<int> grid(ranks, ranks + n_ranks);
    if (grid.empty()) grid = {0, 64, 96, 128, 192};
    *report_json = dup_string(idsan::dump_report(
        idsan::run_sweep_rank(set->set, convert(p), grid)));
  });
}

int idsan_audit_sweep_identities(const idsan_embeddings* set,
                                 const idsan_probe_params* p,
                                 const int32_t* counts, size_t n_counts,
                                 char** report_json) {
  return guarded([&] {
    if (!set || !report_json || (!counts && n_counts))
      idsan::fail(idsan::Err::InvalidArgument, "null argument");
    std::vector<int> grid(counts, counts + n_counts);
    if (grid.empty()) grid = {320, 640, 1280, 2000};
    *report_json = dup_string(idsan::dump_report(
        idsan::run_sweep_identities(set->set, convert(p), grid)));
  });
}

int idsan_audit_transfer(const idsan_embeddings* a, const idsan_embeddings* b,
                         const idsan_probe_params* p, char** report_json) {
  return guarded([&] {
    if (!a || !b || !report_json)
      idsan::fail(idsan::Err::InvalidArgument, "null argument");
    *report_json = dup_string(
        idsan::dump_report(idsan::run_transfer(a->set, b->set, convert(p))));
  });
}

void idsan_attrib_params_init(idsan_attrib_params* p) {
  if (!p) return;
  p->bootstrap_seed = 0;
  p->bootstrap_resamples = 2000;
}

int idsan_audit_attrib(const idsan_embeddings* variants,
                       const idsan_attrib_params* p, char** report_json) {
  return guarded([&] {
    if (!variants || !report_json)
      idsan::fail(idsan::Err::InvalidArgument, "null argument");
    idsan::AttribParams params;
    if (p) {
      params.bootstrap_seed = p->bootstrap_seed;
      params.bootstrap_resamples = p->bootstrap_resamples;
    }
    *report_json = dup_string(
        idsan::dump_report(idsan::run_attrib(variants->set, params)));
  });
}

void idsan_utility_params_init(idsan_utility_params* p) {
  if (!p) return;
  p->knn_k = 20;
  p->alpha = 1e-3;
  p->truth_path = nullptr;
  p->recall_ks = nullptr;
  p->recall_k_count = 0;
}

int idsan_audit_utility(const idsan_embeddings* train,
                        const idsan_embeddings* test,
                        const idsan_projector* projector,
                        const idsan_utility_params* p, char** report_json) {
  return guarded([&] {
    if (!train || !test || !report_json)
      idsan::fail(idsan::Err::InvalidArgument, "null argument");
    idsan::UtilityParams params;
    if (p) {
      params.knn_k = p->knn_k;
      params.alpha = p->alpha;
      if (p->truth_path) params.truth_path = p->truth_path;
      if (p->recall_ks && p->recall_k_count > 0)
        params.recall_ks.assign(p->recall_ks,
                                p->recall_ks + p->recall_k_count);
    }
    std::optional<idsan::Projector> proj;
    if (projector) proj = projector->model;
    *report_json = dup_string(idsan::dump_report(
        idsan::run_utility(train->set, test->set, proj, params)));
  });
}

}  // extern "C"
