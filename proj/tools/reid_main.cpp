// Command-line front end for the re-identification post-processing toolkit.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "reid/camera.hpp"
#include "reid/metrics.hpp"
#include "reid/parallel.hpp"
#include "reid/pipeline.hpp"
#include "reid/pseudo.hpp"
#include "reid/rerank.hpp"
#include "reid/store.hpp"
#include "reid/trainmath.hpp"

namespace fs = std::filesystem;

namespace {

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

void write_report(const reid::EvalReport& report, const fs::path& file) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  std::ofstream(file) << reid::to_json(report).dump(2) << '\n';
}

void print_summary(const reid::EvalReport& report) {
  std::cout << std::fixed << std::setprecision(4) << "mAP " << report.map << "  Rank-1 " << report.rank(1)
            << "  Rank-5 " << report.rank(5) << "  Rank-10 " << report.rank(10) << "  excluded "
            << report.excluded_queries() << '\n';
}

struct Check {
  std::string name;
  double got;
  double want;
  double tol;
};

// Analytic table for the loss and schedule numerics.
int losses_selftest() {
  using namespace reid;
  const std::vector<double> uniform(4, 0.7);
  const std::vector<double> confident{1000.0, 0.0, 0.0, 0.0};
  const std::vector<double> peaked{2.0, 0.0, 0.0, 0.0};
  // softmax(2,0,0,0) = (e^2, 1, 1, 1) / (e^2 + 3)
  const double z = std::exp(2.0) + 3.0;
  const double smoothed = -(0.925 * (2.0 - std::log(z)) + 3 * 0.025 * (0.0 - std::log(z)));
  const std::vector<Check> checks{
      {"label_smooth_ce uniform logits N=4", label_smooth_ce(uniform, 1, 0.1, 4), std::log(4.0), 1e-6},
      {"label_smooth_ce confident eps=0", label_smooth_ce(confident, 0, 0.0, 4), 0.0, 1e-6},
      {"label_smooth_ce eps=0.1 logits (2,0,0,0)", label_smooth_ce(peaked, 0, 0.1, 4), smoothed, 1e-9},
      {"soft_margin_triplet(d, d)", soft_margin_triplet(1.5, 1.5), std::log(2.0), 1e-9},
      {"soft_margin_triplet(0, 20)", soft_margin_triplet(0.0, 20.0), std::log1p(std::exp(-20.0)), 1e-15},
      {"soft_margin_triplet(50, 0)", soft_margin_triplet(50.0, 0.0), 50.0, 1e-6},
      {"softplus(500)", softplus(500.0), 500.0, 1e-9},
      {"softplus(-500)", softplus(-500.0), 0.0, 1e-9},
      {"lr_at(1)", lr_at(1), 0.002, 1e-12},
      {"lr_at(10)", lr_at(10), 0.02, 1e-12},
      {"lr_at(15)", lr_at(15), 0.02, 1e-12},
      {"lr_at(50)", lr_at(50), 0.0002, 1e-12},
  };
  int failures = 0;
  for (const auto& c : checks) {
    const bool ok = std::isfinite(c.got) && std::fabs(c.got - c.want) <= c.tol;
    failures += ok ? 0 : 1;
    std::cout << (ok ? "PASS " : "FAIL ") << c.name << ": got " << std::setprecision(12) << c.got
              << " want " << c.want << '\n';
  }
  std::cout << (failures == 0 ? "all checks passed" : std::to_string(failures) + " check(s) failed") << '\n';
  return failures == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Re-identification embedding post-processing toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  std::size_t threads = 0;
  std::string config_path;
  std::string out_dir;
  app.add_option("--threads", threads, "Worker cap for parallel loops (0 = runtime default)");
  app.add_option("--config", config_path, "Pipeline config (JSON)");
  app.add_option("--out", out_dir, "Output location");

  // synth
  auto* synth = app.add_subcommand("synth", "Write a seeded synthetic embedding bundle");
  reid::SynthConfig sc;
  std::string split_mode = "query_gallery", domain = "target";
  synth->add_option("--n-ids", sc.n_ids);
  synth->add_option("--samples-per-id", sc.samples_per_id);
  synth->add_option("--dim", sc.dim);
  synth->add_option("--cameras", sc.n_cameras);
  synth->add_option("--intra-sigma", sc.intra_sigma);
  synth->add_option("--camera-offset", sc.camera_offset);
  synth->add_option("--seed", sc.seed);
  synth->add_option("--split-mode", split_mode)->check(CLI::IsMember({"query_gallery", "train", "val"}));
  synth->add_option("--domain", domain)->check(CLI::IsMember({"source", "target"}));

  // eval
  auto* eval = app.add_subcommand("eval", "Evaluate query/gallery retrieval (mAP, CMC)");
  std::string eval_bundle, eval_dist, eval_metric = "euclidean";
  bool eval_normalize = false;
  std::size_t max_rank = 50;
  eval->add_option("--bundle", eval_bundle, "Bundle with query and gallery rows")->required();
  eval->add_option("--dist", eval_dist, "Precomputed query x gallery distance directory");
  eval->add_option("--metric", eval_metric)->check(CLI::IsMember({"euclidean", "cosine"}));
  eval->add_flag("--normalize", eval_normalize, "L2-normalise features first");
  eval->add_option("--max-rank", max_rank);

  // camfix
  auto* camfix = app.add_subcommand("camfix", "Camera-bias fixes; writes a bundle and a query ∪ gallery distance");
  std::string cf_bundle, cf_cam_dist, cf_topology;
  std::size_t cf_k = 0;
  double cf_rate = 0.0, cf_alpha = 0.0;
  bool cf_no_mean = false;
  camfix->add_option("--bundle", cf_bundle)->required();
  camfix->add_option("--neighbor-k", cf_k);
  camfix->add_option("--cam-dist", cf_cam_dist, "Comma-separated camera distance directories");
  camfix->add_option("--cam-rate", cf_rate);
  camfix->add_option("--topology", cf_topology, "Validation bundle for the camera topology");
  camfix->add_option("--alpha", cf_alpha);
  camfix->add_flag("--no-camera-mean", cf_no_mean);

  // rerank
  auto* rr = app.add_subcommand("rerank", "k-reciprocal re-ranking of a query ∪ gallery self matrix");
  std::string rr_dist;
  std::size_t rr_nq = 0;
  reid::RerankParams rp;
  rr->add_option("--dist", rr_dist)->required();
  rr->add_option("--n-query", rr_nq)->required();
  rr->add_option("--k1", rp.k1);
  rr->add_option("--k2", rp.k2);
  rr->add_option("--lambda", rp.lambda);

  // cluster
  auto* cl = app.add_subcommand("cluster", "DBSCAN pseudo labels with top-class selection and singletons");
  std::string cl_dist;
  reid::DbscanParams dp;
  std::size_t cl_top = 500, cl_single = 200;
  bool cl_discarded = false;
  cl->add_option("--dist", cl_dist, "Self distance directory (omit to use the cluster section of --config)");
  cl->add_option("--eps", dp.eps);
  cl->add_option("--min-samples", dp.min_samples);
  cl->add_option("--top", cl_top);
  cl->add_option("--singletons", cl_single);
  cl->add_flag("--include-discarded", cl_discarded, "Draw singletons from discarded clusters too");

  // fuse
  auto* fu = app.add_subcommand("fuse", "Weighted fusion of distance matrices");
  std::string fu_dists, fu_weights, fu_norm = "none";
  fu->add_option("--dist", fu_dists, "Comma-separated distance directories")->required();
  fu->add_option("--weights", fu_weights, "Comma-separated weights")->required();
  fu->add_option("--normalize", fu_norm)->check(CLI::IsMember({"none", "minmax"}));

  auto* run = app.add_subcommand("run", "Run the configured pipeline (and cluster stage, if configured)");

  auto* losses = app.add_subcommand("losses", "Loss numerics");
  losses->require_subcommand(1);
  auto* selftest = losses->add_subcommand("selftest", "Check the analytic example table");

  auto* sched = app.add_subcommand("schedule", "Print the learning rate at an epoch");
  std::size_t epoch = 1;
  reid::LrSchedule ls;
  sched->add_option("--epoch", epoch)->required();
  sched->add_option("--base-lr", ls.base_lr);
  sched->add_option("--warmup", ls.warmup_epochs);
  sched->add_option("--total", ls.total_epochs);

  CLI11_PARSE(app, argc, argv);
  reid::set_thread_count(threads);

  try {
    if (*synth) {
      sc.split_mode = split_mode == "train" ? reid::SynthSplitMode::train
                      : split_mode == "val" ? reid::SynthSplitMode::val
                                            : reid::SynthSplitMode::query_gallery;
      sc.domain = reid::parse_domain(domain);
      if (out_dir.empty()) throw std::invalid_argument("synth needs --out");
      reid::save_bundle(reid::generate_synthetic(sc), out_dir);
      std::cout << "wrote " << sc.n_ids * sc.samples_per_id << " rows to " << out_dir << '\n';
    } else if (*eval) {
      auto set = reid::load_bundle(eval_bundle);
      if (eval_normalize) set = reid::l2_normalize(set).set;
      const auto query = reid::select_split(set, reid::Split::query);
      const auto gallery = reid::select_split(set, reid::Split::gallery);
      const auto dist = eval_dist.empty() ? reid::pairwise_distance(query, gallery, reid::parse_metric(eval_metric))
                                          : reid::load_distance(eval_dist);
      const auto report = reid::evaluate(dist, query.meta, gallery.meta, max_rank);
      print_summary(report);
      if (!out_dir.empty()) write_report(report, out_dir);
    } else if (*camfix) {
      if (out_dir.empty()) throw std::invalid_argument("camfix needs --out");
      const auto set = reid::load_bundle(cf_bundle);
      auto all = reid::concat(reid::select_split(set, reid::Split::query), reid::select_split(set, reid::Split::gallery));
      if (!cf_no_mean) all = reid::subtract_camera_mean(all);
      all = reid::neighbor_smooth(all, cf_k);
      auto dist = reid::pairwise_distance(all, all);
      if (!cf_cam_dist.empty()) {
        std::vector<reid::DistanceMatrix> mats;
        for (const auto& p : split_list(cf_cam_dist)) mats.push_back(reid::load_distance(p));
        dist = reid::subtract_camera_distance(dist, reid::mean_camera_distance(mats), cf_rate);
      }
      if (cf_alpha != 0.0) {
        if (cf_topology.empty()) throw std::invalid_argument("--alpha needs --topology");
        const auto topo = reid::build_topology(reid::load_bundle(cf_topology).meta);
        const auto cams = reid::cameras_of(all.meta);
        dist = reid::apply_topology(dist, topo, cams, cams, cf_alpha);
      }
      reid::save_bundle(all, out_dir);
      reid::save_distance(dist, fs::path(out_dir) / "dist");
      std::cout << "wrote bundle and " << dist.rows << "x" << dist.cols << " distance to " << out_dir << '\n';
    } else if (*rr) {
      if (out_dir.empty()) throw std::invalid_argument("rerank needs --out");
      const auto out = reid::rerank(reid::load_distance(rr_dist), rr_nq, rp);
      reid::save_distance(out, out_dir);
      std::cout << "wrote " << out.rows << "x" << out.cols << " re-ranked distance to " << out_dir << '\n';
    } else if (*cl) {
      reid::ClusterResult result;
      if (!cl_dist.empty()) {
        const auto dist = reid::load_distance(cl_dist);
        result.indices = dist.row_ids;
        result.dbscan_labels = reid::dbscan(dist, dp);
        result.labeling = reid::select_top_classes(result.dbscan_labels, cl_top);
        result.labeling = reid::add_singletons(result.labeling, result.dbscan_labels, dist, cl_single,
                                               cl_discarded ? reid::SingletonSource::outliers_and_discarded
                                                            : reid::SingletonSource::outliers);
        reid::write_pseudo_labels(out_dir.empty() ? "labels.csv" : out_dir, result.indices, result.labeling);
      } else {
        if (config_path.empty()) throw std::invalid_argument("cluster needs --dist or --config");
        auto cfg = reid::load_pipeline_config(config_path);
        if (!cfg.cluster) throw std::invalid_argument("config has no cluster section");
        if (!out_dir.empty()) cfg.cluster->out = out_dir;
        if (cfg.cluster->out.empty()) cfg.cluster->out = "labels.csv";
        result = reid::run_cluster_stage(*cfg.cluster);
      }
      std::size_t singletons = 0;
      for (bool f : result.labeling.negatives_only) singletons += f ? 1 : 0;
      std::cout << result.labeling.n_classes << " classes (" << singletons << " negatives-only)\n";
    } else if (*fu) {
      if (out_dir.empty()) throw std::invalid_argument("fuse needs --out");
      std::vector<reid::DistanceMatrix> mats;
      for (const auto& p : split_list(fu_dists)) mats.push_back(reid::load_distance(p));
      reid::FusionSpec spec{{}, reid::parse_fusion_norm(fu_norm)};
      for (const auto& w : split_list(fu_weights)) spec.weights.push_back(std::stod(w));
      reid::save_distance(reid::fuse_distances(mats, spec), out_dir);
    } else if (*run) {
      if (config_path.empty()) throw std::invalid_argument("run needs --config");
      auto cfg = reid::load_pipeline_config(config_path);
      if (!out_dir.empty()) cfg.out = out_dir;
      if (cfg.has_eval_input()) {
        const auto result = reid::run_pipeline(cfg);
        for (const auto& s : result.stages) {
          std::cout << std::left << std::setw(20) << s.name;
          print_summary(s.report);
        }
      }
      if (cfg.cluster) {
        if (cfg.cluster->out.empty()) cfg.cluster->out = cfg.out / "labels.csv";
        const auto result = reid::run_cluster_stage(*cfg.cluster);
        std::cout << "cluster: " << result.labeling.n_classes << " classes\n";
      }
    } else if (*losses && *selftest) {
      return losses_selftest();
    } else if (*sched) {
      std::cout << std::setprecision(10) << reid::lr_at(epoch, ls) << '\n';
    }
  } catch (const reid::StageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
