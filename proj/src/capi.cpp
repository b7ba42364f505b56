#include "mstage.h"

#include <cstring>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "core/dataset.hpp"
#include "core/disturb.hpp"
#include "core/error.hpp"
#include "core/eval.hpp"
#include "core/experiment.hpp"
#include "core/models.hpp"
#include "core/opconfig.hpp"
#include "core/serialize.hpp"
#include "core/trainer.hpp"
#include "core/version.hpp"

namespace fs = std::filesystem;
using namespace mstage;
using nlohmann::json;

struct ms_model {
  PredictorNet pred;
  std::optional<RefinerNet> refiner;

  MultiStage view() const { return {&pred, refiner ? &*refiner : nullptr}; }
};

struct ms_stream {
  StreamingSession session;
  size_t in_dim;
  size_t classes;
};

namespace {

thread_local std::string g_last_error;

ms_status status_of(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidArg: return MS_ERR_INVALID_ARG;
    case ErrorKind::Config: return MS_ERR_CONFIG;
    case ErrorKind::Dependency: return MS_ERR_DEPENDENCY;
    case ErrorKind::Numeric: return MS_ERR_NUMERIC;
    case ErrorKind::Io: return MS_ERR_IO;
    case ErrorKind::Internal: return MS_ERR_INTERNAL;
  }
  return MS_ERR_INTERNAL;
}

template <class F>
ms_status guarded(F&& body) {
  try {
    body();
    return MS_OK;
  } catch (const Error& e) {
    g_last_error = e.what();
    return status_of(e.kind());
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return MS_ERR_INTERNAL;
  } catch (...) {
    g_last_error = "unknown failure";
    return MS_ERR_INTERNAL;
  }
}

const char* req(const char* p, const char* name) {
  if (!p) fail(ErrorKind::InvalidArg, std::string(name) + " must not be null");
  return p;
}

fs::path manifest_path_of(const char* path) {
  fs::path p = path;
  return fs::is_directory(p) ? p / "manifest.json" : p;
}

PredictorNet load_predictor_for(const DatasetManifest& m, const char* checkpoint) {
  PredictorNet net = PredictorNet::load(checkpoint);
  if (net.spec().in_dim != m.feat_dim || net.spec().classes != m.classes)
    fail(ErrorKind::Config,
         std::string(checkpoint) + " expects " + std::to_string(net.spec().in_dim) +
             "-dim features over " + std::to_string(net.spec().classes) +
             " classes, dataset has " + std::to_string(m.feat_dim) + " / " +
             std::to_string(m.classes));
  return net;
}

MetricsReport eval_split(const DatasetManifest& m, const std::string& split,
                         const PredictorNet& pred, const RefinerNet* refiner) {
  std::vector<VideoMetrics> vm;
  for (const std::string& id : m.split(split)) {
    VideoRecord v = load_video(m, id);
    InferResult res = multistage_infer({&pred, refiner}, v.features);
    vm.push_back(video_metrics(v.id, res.labels, v.labels));
  }
  return aggregate(std::move(vm));
}

}  // namespace

extern "C" {

const char* ms_version(void) { return kLibVersion; }

const char* ms_last_error(void) { return g_last_error.c_str(); }

ms_status ms_model_open(const char* predictor_path, const char* refiner_path_or_null,
                        ms_model** out) {
  return guarded([&] {
    req(predictor_path, "predictor_path");
    if (!out) fail(ErrorKind::InvalidArg, "out must not be null");
    PredictorNet pred = PredictorNet::load(predictor_path);
    std::optional<RefinerNet> refiner;
    if (refiner_path_or_null) {
      refiner = RefinerNet::load(refiner_path_or_null);
      if (refiner->config().classes != pred.spec().classes)
        fail(ErrorKind::Config,
             "refiner expects " + std::to_string(refiner->config().classes) +
                 " classes but the predictor outputs " + std::to_string(pred.spec().classes));
    }
    *out = new ms_model{std::move(pred), std::move(refiner)};
  });
}

void ms_model_close(ms_model* model) { delete model; }

ms_status ms_model_input_dim(const ms_model* model, size_t* out) {
  return guarded([&] {
    if (!model || !out) fail(ErrorKind::InvalidArg, "model and out must not be null");
    *out = model->pred.spec().in_dim;
  });
}

ms_status ms_model_classes(const ms_model* model, size_t* out) {
  return guarded([&] {
    if (!model || !out) fail(ErrorKind::InvalidArg, "model and out must not be null");
    *out = model->pred.spec().classes;
  });
}

ms_status ms_model_causal(const ms_model* model, int* out) {
  return guarded([&] {
    if (!model || !out) fail(ErrorKind::InvalidArg, "model and out must not be null");
    *out = (!model->refiner || model->refiner->causal()) ? 1 : 0;
  });
}

ms_status ms_model_infer(const ms_model* model, const double* features, size_t t_len,
                         size_t in_dim, int32_t* labels_out, double* probs_out_or_null) {
  return guarded([&] {
    if (!model || !features || !labels_out)
      fail(ErrorKind::InvalidArg, "model, features and labels_out must not be null");
    if (t_len == 0) fail(ErrorKind::InvalidArg, "t_len must be positive");
    if (in_dim != model->pred.spec().in_dim)
      fail(ErrorKind::InvalidArg, "in_dim " + std::to_string(in_dim) + " does not match model (" +
                                      std::to_string(model->pred.spec().in_dim) + ")");
    Tensor feats = Tensor::from({t_len, in_dim},
                                std::vector<double>(features, features + t_len * in_dim));
    InferResult res = multistage_infer(model->view(), feats);
    std::copy(res.labels.begin(), res.labels.end(), labels_out);
    if (probs_out_or_null) {
      const Tensor& probs = res.final_probs();
      std::copy(probs.data(), probs.data() + probs.size(), probs_out_or_null);
    }
  });
}

ms_status ms_stream_open(const ms_model* model, ms_stream** out) {
  return guarded([&] {
    if (!model || !out) fail(ErrorKind::InvalidArg, "model and out must not be null");
    *out = new ms_stream{StreamingSession(model->view()), model->pred.spec().in_dim,
                         model->pred.spec().classes};
  });
}

ms_status ms_stream_push(ms_stream* stream, const double* frame, size_t in_dim,
                         int32_t* label_out, double* probs_out_or_null) {
  return guarded([&] {
    if (!stream || !frame || !label_out)
      fail(ErrorKind::InvalidArg, "stream, frame and label_out must not be null");
    if (in_dim != stream->in_dim)
      fail(ErrorKind::InvalidArg, "in_dim " + std::to_string(in_dim) + " does not match model (" +
                                      std::to_string(stream->in_dim) + ")");
    std::vector<double> probs;
    *label_out = stream->session.push(frame, in_dim, probs_out_or_null ? &probs : nullptr);
    if (probs_out_or_null) std::copy(probs.begin(), probs.end(), probs_out_or_null);
  });
}

void ms_stream_close(ms_stream* stream) { delete stream; }

ms_status ms_gen_dataset(const char* config_path, const char* overrides_json,
                         const char* out_dir) {
  return guarded([&] {
    req(out_dir, "out_dir");
    json j = opcfg::load_config(config_path, overrides_json);
    SynthConfig cfg = opcfg::parse_generate(j, "gen-data config");
    generate_synthetic(cfg, out_dir);
  });
}

ms_status ms_train_predictor(const char* manifest_path, const char* config_path,
                             const char* overrides_json, const char* out_checkpoint,
                             const char* out_history_or_null) {
  return guarded([&] {
    req(manifest_path, "manifest_path");
    req(out_checkpoint, "out_checkpoint");
    auto o = opcfg::parse_train_predictor(opcfg::load_config(config_path, overrides_json));
    DatasetManifest m = read_manifest(manifest_path_of(manifest_path));
    auto videos = load_videos(m, m.split("train"));
    PredictorNet net(m.feat_dim, m.classes, o.seed, o.filters, o.blocks);
    TrainConfig tc = o.train;
    tc.seed = o.seed;
    tc.checkpoint = out_checkpoint;
    TrainHistory hist = train_predictor(net, videos, tc);
    if (out_history_or_null) hist.write_jsonl(out_history_or_null);
  });
}

ms_status ms_predict_split(const char* manifest_path, const char* split,
                           const char* predictor_checkpoint, const char* out_dir) {
  return guarded([&] {
    req(manifest_path, "manifest_path");
    req(split, "split");
    req(predictor_checkpoint, "predictor_checkpoint");
    req(out_dir, "out_dir");
    DatasetManifest m = read_manifest(manifest_path_of(manifest_path));
    PredictorNet net = load_predictor_for(m, predictor_checkpoint);
    fs::create_directories(out_dir);
    json index;
    index["split"] = split;
    index["videos"] = json::object();
    for (const std::string& id : m.split(split)) {
      VideoRecord v = load_video(m, id);
      Tensor probs = net.forward(v.features);
      io::write_prob_seq(fs::path(out_dir) / (id + ".mspp"), probs);
      index["videos"][id] = {{"probs", id + ".mspp"}, {"t", probs.dim(0)}};
    }
    io::atomic_write(fs::path(out_dir) / "index.json", index.dump(2) + "\n");
  });
}

ms_status ms_gen_disturbed(const char* manifest_path, const char* predictor_checkpoint,
                           const char* config_path, const char* overrides_json,
                           const char* out_dir) {
  return guarded([&] {
    req(manifest_path, "manifest_path");
    req(predictor_checkpoint, "predictor_checkpoint");
    req(out_dir, "out_dir");
    auto o = opcfg::parse_gen_disturbed(opcfg::load_config(config_path, overrides_json));
    DatasetManifest m = read_manifest(manifest_path_of(manifest_path));
    PredictorNet net = load_predictor_for(m, predictor_checkpoint);
    auto videos = load_videos(m, m.split("train"));

    std::vector<DisturbedSample> samples;
    std::vector<HardFrameMask> masks;
    bool have_masks = false;
    json provenance;
    provenance["seed"] = o.seed;
    provenance["types"] = json::array();
    for (Provenance type : o.types) {
      provenance["types"].push_back(provenance_name(type));
      if (type == Provenance::Cv) {
        CvOptions co;
        co.k = o.k;
        co.classes = m.classes;
        co.filters = net.spec().filters;
        co.blocks = net.spec().blocks;
        co.train = o.train;
        co.train.seed = o.seed;
        std::vector<CvFoldLog> fold_log;
        auto cv = gen_cross_validate(videos, co, &fold_log);
        samples.insert(samples.end(), cv.begin(), cv.end());
        json folds = json::array();
        for (const CvFoldLog& f : fold_log)
          folds.push_back({{"fold", f.fold},
                           {"seed", f.seed},
                           {"train_ids", f.train_ids},
                           {"eval_ids", f.eval_ids},
                           {"final_loss", f.final_loss}});
        provenance["cv_folds"] = std::move(folds);
      } else if (type == Provenance::Mhf) {
        if (!have_masks) {
          masks = detect_hard_frames(videos, m.classes, o.seed);
          have_masks = true;
        }
        auto mhf = gen_mask_hard_frame(videos, net, masks);
        samples.insert(samples.end(), mhf.begin(), mhf.end());
      } else {
        double ratio = o.mask_ratio;
        if (ratio < 0.0) {
          if (!have_masks) {
            masks = detect_hard_frames(videos, m.classes, o.seed);
            have_masks = true;
          }
          ratio = mean_hard_fraction(masks);
        }
        provenance["rm_ratio"] = ratio;
        auto rm = gen_random_mask(videos, net, ratio, o.seed);
        samples.insert(samples.end(), rm.begin(), rm.end());
      }
    }
    write_samples(out_dir, samples, m.classes);
    io::atomic_write(fs::path(out_dir) / "provenance.json", provenance.dump(2) + "\n");
  });
}

ms_status ms_train_refiner(const char* samples_path, const char* config_path,
                           const char* overrides_json, const char* out_checkpoint,
                           const char* out_history_or_null) {
  return guarded([&] {
    req(samples_path, "samples_path");
    req(out_checkpoint, "out_checkpoint");
    auto o = opcfg::parse_train_refiner(opcfg::load_config(config_path, overrides_json));
    auto samples = read_samples(samples_path);
    if (samples.empty()) fail(ErrorKind::Dependency, "no samples in " + std::string(samples_path));
    RefinerConfig rc = o.refiner;
    rc.classes = samples.front().input.dim(1);
    RefinerNet net(rc, o.seed);
    TrainConfig tc = o.train;
    tc.seed = o.seed;
    tc.checkpoint = out_checkpoint;
    TrainHistory hist = train_refiner(net, to_refine_samples(samples), tc);
    if (out_history_or_null) hist.write_jsonl(out_history_or_null);
  });
}

ms_status ms_train_e2e(const char* manifest_path, const char* config_path,
                       const char* overrides_json, const char* out_predictor,
                       const char* out_refiner, const char* out_history_or_null) {
  return guarded([&] {
    req(manifest_path, "manifest_path");
    req(out_predictor, "out_predictor");
    req(out_refiner, "out_refiner");
    auto o = opcfg::parse_train_e2e(opcfg::load_config(config_path, overrides_json));
    DatasetManifest m = read_manifest(manifest_path_of(manifest_path));
    auto videos = load_videos(m, m.split("train"));
    PredictorNet pred(m.feat_dim, m.classes, o.seed, o.filters, o.blocks);
    RefinerConfig rc = o.refiner;
    rc.classes = m.classes;
    RefinerNet refiner(rc, o.seed);
    TrainConfig tc = o.train;
    tc.seed = o.seed;
    tc.checkpoint = out_predictor;
    tc.checkpoint_refiner = out_refiner;
    TrainHistory hist = train_e2e(pred, &refiner, videos, tc);
    if (out_history_or_null) hist.write_jsonl(out_history_or_null);
  });
}

ms_status ms_infer_file(const char* predictor_checkpoint, const char* refiner_checkpoint_or_null,
                        const char* features_path, int online, const char* out_labels,
                        const char* out_probs_or_null) {
  return guarded([&] {
    req(predictor_checkpoint, "predictor_checkpoint");
    req(features_path, "features_path");
    req(out_labels, "out_labels");
    PredictorNet pred = PredictorNet::load(predictor_checkpoint);
    std::optional<RefinerNet> refiner;
    if (refiner_checkpoint_or_null) refiner = RefinerNet::load(refiner_checkpoint_or_null);
    MultiStage model{&pred, refiner ? &*refiner : nullptr};

    Tensor feats = io::read_feature_seq(features_path);
    if (feats.dim(1) != pred.spec().in_dim)
      fail(ErrorKind::Config, std::string(features_path) + " has " +
                                  std::to_string(feats.dim(1)) + "-dim features, model expects " +
                                  std::to_string(pred.spec().in_dim));

    PhaseLabels labels;
    Tensor probs({feats.dim(0), pred.spec().classes});
    if (online) {
      StreamingSession session(model);
      std::vector<double> row;
      for (size_t t = 0; t < feats.dim(0); ++t) {
        labels.push_back(session.push(feats.row(t), feats.dim(1), &row));
        std::copy(row.begin(), row.end(), probs.row(t));
      }
    } else {
      InferResult res = multistage_infer(model, feats);
      labels = res.labels;
      probs = res.final_probs();
    }
    write_labels_text(out_labels, labels);
    if (out_probs_or_null) io::write_prob_seq(out_probs_or_null, probs);
  });
}

ms_status ms_evaluate(const char* manifest_path, const char* split,
                      const char* predictor_checkpoint, const char* refiner_checkpoint_or_null,
                      const char* out_report, const char* out_csv_or_null) {
  return guarded([&] {
    req(manifest_path, "manifest_path");
    req(split, "split");
    req(predictor_checkpoint, "predictor_checkpoint");
    req(out_report, "out_report");
    DatasetManifest m = read_manifest(manifest_path_of(manifest_path));
    PredictorNet pred = load_predictor_for(m, predictor_checkpoint);
    std::optional<RefinerNet> refiner;
    if (refiner_checkpoint_or_null) {
      refiner = RefinerNet::load(refiner_checkpoint_or_null);
      if (refiner->config().classes != m.classes)
        fail(ErrorKind::Config, "refiner expects " + std::to_string(refiner->config().classes) +
                                    " classes, dataset has " + std::to_string(m.classes));
    }
    MetricsReport report = eval_split(m, split, pred, refiner ? &*refiner : nullptr);
    write_report(out_report, report);
    if (out_csv_or_null) write_report_csv(out_csv_or_null, report);
  });
}

ms_status ms_compare(const char* report_a, const char* report_b, const char* out_json) {
  return guarded([&] {
    req(report_a, "report_a");
    req(report_b, "report_b");
    req(out_json, "out_json");
    ReportComparison cmp = compare_reports(read_report(report_a), read_report(report_b));
    io::atomic_write(out_json, comparison_to_json_text(cmp));
  });
}

ms_status ms_run_experiment(const char* config_path, const char* overrides_json) {
  return guarded([&] {
    if (!config_path && !overrides_json)
      fail(ErrorKind::InvalidArg, "need a config file or overrides");
    json j = opcfg::load_config(config_path, overrides_json);
    fs::path base = config_path ? fs::absolute(config_path).parent_path() : fs::current_path();
    ExperimentConfig cfg = parse_experiment_config(j.dump(), base);
    run_experiment(cfg);
  });
}

}  // extern "C"
