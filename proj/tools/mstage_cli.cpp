#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>
#include <mstage.h>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CliError {
  int code;
  std::string status;
  std::string message;
};

int exit_code_of(ms_status s) {
  switch (s) {
    case MS_OK: return 0;
    case MS_ERR_INVALID_ARG: return 2;
    case MS_ERR_CONFIG: return 3;
    case MS_ERR_DEPENDENCY: return 4;
    case MS_ERR_NUMERIC: return 5;
    default: return 1;
  }
}

const char* status_name(ms_status s) {
  switch (s) {
    case MS_ERR_INVALID_ARG: return "usage";
    case MS_ERR_CONFIG: return "config";
    case MS_ERR_DEPENDENCY: return "dependency";
    case MS_ERR_NUMERIC: return "numeric";
    case MS_ERR_IO: return "io";
    default: return "internal";
  }
}

void check(ms_status s) {
  if (s != MS_OK) throw CliError{exit_code_of(s), status_name(s), ms_last_error()};
}

const char* cstr(const std::string& s) { return s.empty() ? nullptr : s.c_str(); }

// outputs default under $MSTAGE_OUT_ROOT when the flag is omitted
std::string out_or_default(const std::string& given, const char* leaf,
                           const char* flag = "--out") {
  if (!given.empty()) return given;
  if (const char* root = std::getenv("MSTAGE_OUT_ROOT"); root && *root)
    return (fs::path(root) / leaf).string();
  throw CliError{2, "usage",
                 std::string(flag) + " is required unless MSTAGE_OUT_ROOT is set"};
}

json base_overrides(const std::string& blob) {
  if (blob.empty()) return json::object();
  json j = json::parse(blob, nullptr, false);
  if (j.is_discarded() || !j.is_object())
    throw CliError{3, "config", "--override must be a JSON object"};
  return j;
}

std::string dump_or_empty(const json& ov) { return ov.empty() ? std::string() : ov.dump(); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multi-stage temporal sequence labeling toolkit"};
  app.set_version_flag("--version", std::string(ms_version()));
  app.require_subcommand(1);

  // ---- gen-data ----
  struct GenData {
    std::string config, blob, out;
    uint64_t seed = 0;
    int64_t classes = 0, feat_dim = 0, train_videos = 0, test_videos = 0;
  };
  auto gd = std::make_shared<GenData>();
  auto* gen_data = app.add_subcommand("gen-data", "generate a synthetic workflow dataset");
  gen_data->add_option("--config", gd->config, "JSON generator config");
  gen_data->add_option("--override", gd->blob, "raw JSON merged over --config");
  gen_data->add_option("--out", gd->out, "dataset directory (default $MSTAGE_OUT_ROOT/dataset)");
  auto* gd_seed = gen_data->add_option("--seed", gd->seed, "generator seed");
  auto* gd_classes = gen_data->add_option("--classes", gd->classes, "phase count");
  auto* gd_dim = gen_data->add_option("--feat-dim", gd->feat_dim, "feature dimension");
  auto* gd_train = gen_data->add_option("--train-videos", gd->train_videos, "train split size");
  auto* gd_test = gen_data->add_option("--test-videos", gd->test_videos, "test split size");
  gen_data->callback([=] {
    json ov = base_overrides(gd->blob);
    if (gd_seed->count()) ov["seed"] = gd->seed;
    if (gd_classes->count()) ov["classes"] = gd->classes;
    if (gd_dim->count()) ov["feat_dim"] = gd->feat_dim;
    if (gd_train->count()) ov["train_videos"] = gd->train_videos;
    if (gd_test->count()) ov["test_videos"] = gd->test_videos;
    const std::string ovs = dump_or_empty(ov);
    check(ms_gen_dataset(cstr(gd->config), cstr(ovs),
                         out_or_default(gd->out, "dataset").c_str()));
  });

  // ---- train-predictor ----
  struct TrainPred {
    std::string data, config, blob, out, history;
    uint64_t seed = 0;
    int64_t filters = 0, blocks = 0, epochs = 0;
    double lr = 0;
  };
  auto tp = std::make_shared<TrainPred>();
  auto* train_pred = app.add_subcommand("train-predictor", "train the stage-one predictor");
  train_pred->add_option("--data", tp->data, "dataset directory or manifest.json")->required();
  train_pred->add_option("--config", tp->config, "JSON training config");
  train_pred->add_option("--override", tp->blob, "raw JSON merged over --config");
  train_pred->add_option("--out", tp->out, "checkpoint path (default $MSTAGE_OUT_ROOT/predictor.msck)");
  train_pred->add_option("--history", tp->history, "per-epoch JSONL history path");
  auto* tp_seed = train_pred->add_option("--seed", tp->seed, "training seed");
  auto* tp_filters = train_pred->add_option("--filters", tp->filters, "conv filters per block");
  auto* tp_blocks = train_pred->add_option("--blocks", tp->blocks, "dilated blocks");
  auto* tp_epochs = train_pred->add_option("--epochs", tp->epochs, "training epochs");
  auto* tp_lr = train_pred->add_option("--lr", tp->lr, "learning rate");
  train_pred->callback([=] {
    json ov = base_overrides(tp->blob);
    if (tp_seed->count()) ov["seed"] = tp->seed;
    if (tp_filters->count()) ov["filters"] = tp->filters;
    if (tp_blocks->count()) ov["blocks"] = tp->blocks;
    if (tp_epochs->count()) ov["train"]["epochs"] = tp->epochs;
    if (tp_lr->count()) ov["train"]["lr"] = tp->lr;
    const std::string ovs = dump_or_empty(ov);
    check(ms_train_predictor(tp->data.c_str(), cstr(tp->config), cstr(ovs),
                             out_or_default(tp->out, "predictor.msck").c_str(),
                             cstr(tp->history)));
  });

  // ---- predict ----
  struct Predict {
    std::string data, model, split = "test", out;
  };
  auto pr = std::make_shared<Predict>();
  auto* predict = app.add_subcommand("predict", "write probability sequences for a split");
  predict->add_option("--data", pr->data, "dataset directory or manifest.json")->required();
  predict->add_option("--model", pr->model, "predictor checkpoint")->required();
  predict->add_option("--split", pr->split, "train or test (default test)");
  predict->add_option("--out", pr->out, "output directory (default $MSTAGE_OUT_ROOT/predictions)");
  predict->callback([=] {
    check(ms_predict_split(pr->data.c_str(), pr->split.c_str(), pr->model.c_str(),
                           out_or_default(pr->out, "predictions").c_str()));
  });

  // ---- gen-disturbed ----
  struct GenDist {
    std::string data, model, config, blob, out;
    std::vector<std::string> types;
    int64_t k = 0, epochs = 0;
    double mask_ratio = 0, lr = 0;
    uint64_t seed = 0;
  };
  auto gdst = std::make_shared<GenDist>();
  auto* gen_dist = app.add_subcommand("gen-disturbed", "generate disturbed refinement samples");
  gen_dist->add_option("--data", gdst->data, "dataset directory or manifest.json")->required();
  gen_dist->add_option("--model", gdst->model, "trained predictor checkpoint")->required();
  gen_dist->add_option("--config", gdst->config, "JSON generator config");
  gen_dist->add_option("--override", gdst->blob, "raw JSON merged over --config");
  gen_dist->add_option("--out", gdst->out, "sample directory (default $MSTAGE_OUT_ROOT/disturbed)");
  auto* gdst_types =
      gen_dist->add_option("--types", gdst->types, "subset of cv,mhf,rm")->delimiter(',');
  auto* gdst_k = gen_dist->add_option("--k", gdst->k, "cross-validation folds");
  auto* gdst_ratio = gen_dist->add_option("--mask-ratio", gdst->mask_ratio, "rm mask ratio");
  auto* gdst_seed = gen_dist->add_option("--seed", gdst->seed, "generator seed");
  auto* gdst_epochs = gen_dist->add_option("--epochs", gdst->epochs, "fold training epochs");
  auto* gdst_lr = gen_dist->add_option("--lr", gdst->lr, "fold training learning rate");
  gen_dist->callback([=] {
    json ov = base_overrides(gdst->blob);
    if (gdst_types->count()) ov["types"] = gdst->types;
    if (gdst_k->count()) ov["k"] = gdst->k;
    if (gdst_ratio->count()) ov["mask_ratio"] = gdst->mask_ratio;
    if (gdst_seed->count()) ov["seed"] = gdst->seed;
    if (gdst_epochs->count()) ov["train"]["epochs"] = gdst->epochs;
    if (gdst_lr->count()) ov["train"]["lr"] = gdst->lr;
    const std::string ovs = dump_or_empty(ov);
    check(ms_gen_disturbed(gdst->data.c_str(), gdst->model.c_str(), cstr(gdst->config),
                           cstr(ovs), out_or_default(gdst->out, "disturbed").c_str()));
  });

  // ---- train-refiner ----
  struct TrainRef {
    std::string samples, config, blob, out, history, model;
    int64_t stacks = 0, hidden = 0, filters = 0, blocks = 0, epochs = 0;
    double lr = 0;
    uint64_t seed = 0;
  };
  auto tr = std::make_shared<TrainRef>();
  auto* train_ref = app.add_subcommand("train-refiner", "train a refiner on disturbed samples");
  train_ref->add_option("--samples", tr->samples, "disturbed sample directory or samples.json")
      ->required();
  train_ref->add_option("--config", tr->config, "JSON training config");
  train_ref->add_option("--override", tr->blob, "raw JSON merged over --config");
  train_ref->add_option("--out", tr->out, "checkpoint path (default $MSTAGE_OUT_ROOT/refiner.msck)");
  train_ref->add_option("--history", tr->history, "per-epoch JSONL history path");
  auto* tr_model = train_ref->add_option("--model", tr->model, "gru, causal-tcn, or tcn");
  auto* tr_stacks = train_ref->add_option("--stacks", tr->stacks, "refinement stages");
  auto* tr_hidden = train_ref->add_option("--hidden", tr->hidden, "gru hidden size");
  auto* tr_filters = train_ref->add_option("--filters", tr->filters, "tcn filters");
  auto* tr_blocks = train_ref->add_option("--blocks", tr->blocks, "tcn blocks");
  auto* tr_seed = train_ref->add_option("--seed", tr->seed, "training seed");
  auto* tr_epochs = train_ref->add_option("--epochs", tr->epochs, "training epochs");
  auto* tr_lr = train_ref->add_option("--lr", tr->lr, "learning rate");
  train_ref->callback([=] {
    json ov = base_overrides(tr->blob);
    if (tr_model->count()) ov["kind"] = tr->model;
    if (tr_stacks->count()) ov["stacks"] = tr->stacks;
    if (tr_hidden->count()) ov["hidden"] = tr->hidden;
    if (tr_filters->count()) ov["filters"] = tr->filters;
    if (tr_blocks->count()) ov["blocks"] = tr->blocks;
    if (tr_seed->count()) ov["seed"] = tr->seed;
    if (tr_epochs->count()) ov["train"]["epochs"] = tr->epochs;
    if (tr_lr->count()) ov["train"]["lr"] = tr->lr;
    const std::string ovs = dump_or_empty(ov);
    check(ms_train_refiner(tr->samples.c_str(), cstr(tr->config), cstr(ovs),
                           out_or_default(tr->out, "refiner.msck").c_str(),
                           cstr(tr->history)));
  });

  // ---- train-e2e ----
  struct TrainE2e {
    std::string data, config, blob, out_pred, out_ref, history, model;
    int64_t stacks = 0, hidden = 0, filters = 0, blocks = 0, epochs = 0;
    double lr = 0;
    uint64_t seed = 0;
  };
  auto te = std::make_shared<TrainE2e>();
  auto* train_e2e = app.add_subcommand("train-e2e", "train predictor + refiner jointly");
  train_e2e->add_option("--data", te->data, "dataset directory or manifest.json")->required();
  train_e2e->add_option("--config", te->config, "JSON training config");
  train_e2e->add_option("--override", te->blob, "raw JSON merged over --config");
  train_e2e->add_option("--out-predictor", te->out_pred,
                        "predictor checkpoint (default $MSTAGE_OUT_ROOT/e2e_predictor.msck)");
  train_e2e->add_option("--out-refiner", te->out_ref,
                        "refiner checkpoint (default $MSTAGE_OUT_ROOT/e2e_refiner.msck)");
  train_e2e->add_option("--history", te->history, "per-epoch JSONL history path");
  auto* te_model = train_e2e->add_option("--model", te->model, "refiner: gru, causal-tcn, or tcn");
  auto* te_stacks = train_e2e->add_option("--stacks", te->stacks, "refinement stages");
  auto* te_hidden = train_e2e->add_option("--hidden", te->hidden, "gru hidden size");
  auto* te_filters = train_e2e->add_option("--filters", te->filters, "predictor conv filters");
  auto* te_blocks = train_e2e->add_option("--blocks", te->blocks, "predictor dilated blocks");
  auto* te_seed = train_e2e->add_option("--seed", te->seed, "training seed");
  auto* te_epochs = train_e2e->add_option("--epochs", te->epochs, "training epochs");
  auto* te_lr = train_e2e->add_option("--lr", te->lr, "learning rate");
  train_e2e->callback([=] {
    json ov = base_overrides(te->blob);
    if (te_filters->count()) ov["predictor"]["filters"] = te->filters;
    if (te_blocks->count()) ov["predictor"]["blocks"] = te->blocks;
    if (te_model->count()) ov["refiner"]["kind"] = te->model;
    if (te_stacks->count()) ov["refiner"]["stacks"] = te->stacks;
    if (te_hidden->count()) ov["refiner"]["hidden"] = te->hidden;
    if (te_seed->count()) ov["seed"] = te->seed;
    if (te_epochs->count()) ov["train"]["epochs"] = te->epochs;
    if (te_lr->count()) ov["train"]["lr"] = te->lr;
    const std::string ovs = dump_or_empty(ov);
    check(ms_train_e2e(te->data.c_str(), cstr(te->config), cstr(ovs),
                       out_or_default(te->out_pred, "e2e_predictor.msck", "--out-predictor").c_str(),
                       out_or_default(te->out_ref, "e2e_refiner.msck", "--out-refiner").c_str(),
                       cstr(te->history)));
  });

  // ---- infer ----
  struct Infer {
    std::string model, refiner, features, out, probs;
    bool online = false;
  };
  auto inf = std::make_shared<Infer>();
  auto* infer = app.add_subcommand("infer", "label one feature sequence");
  infer->add_option("--model", inf->model, "predictor checkpoint")->required();
  infer->add_option("--refiner", inf->refiner, "optional refiner checkpoint");
  infer->add_option("--features", inf->features, "input feature file")->required();
  infer->add_flag("--online", inf->online, "frame-by-frame streaming inference");
  infer->add_option("--out", inf->out, "label output path (default $MSTAGE_OUT_ROOT/labels.txt)");
  infer->add_option("--probs", inf->probs, "optional probability sequence output");
  infer->callback([=] {
    check(ms_infer_file(inf->model.c_str(), cstr(inf->refiner), inf->features.c_str(),
                        inf->online ? 1 : 0, out_or_default(inf->out, "labels.txt").c_str(),
                        cstr(inf->probs)));
  });

  // ---- eval ----
  struct Eval {
    std::string data, model, refiner, split = "test", out, csv;
  };
  auto ev = std::make_shared<Eval>();
  auto* eval_cmd = app.add_subcommand("eval", "score a model on a dataset split");
  eval_cmd->add_option("--data", ev->data, "dataset directory or manifest.json")->required();
  eval_cmd->add_option("--model", ev->model, "predictor checkpoint")->required();
  eval_cmd->add_option("--refiner", ev->refiner, "optional refiner checkpoint");
  eval_cmd->add_option("--split", ev->split, "train or test (default test)");
  eval_cmd->add_option("--out", ev->out, "report path (default $MSTAGE_OUT_ROOT/report.json)");
  eval_cmd->add_option("--csv", ev->csv, "optional per-video CSV path");
  eval_cmd->callback([=] {
    check(ms_evaluate(ev->data.c_str(), ev->split.c_str(), ev->model.c_str(),
                      cstr(ev->refiner), out_or_default(ev->out, "report.json").c_str(),
                      cstr(ev->csv)));
  });

  // ---- compare ----
  struct Compare {
    std::string a, b, out;
  };
  auto cm = std::make_shared<Compare>();
  auto* compare = app.add_subcommand("compare", "diff two evaluation reports");
  compare->add_option("report_a", cm->a, "baseline report")->required();
  compare->add_option("report_b", cm->b, "candidate report")->required();
  compare->add_option("--out", cm->out, "output path (default $MSTAGE_OUT_ROOT/comparison.json)");
  compare->callback([=] {
    check(ms_compare(cm->a.c_str(), cm->b.c_str(),
                     out_or_default(cm->out, "comparison.json").c_str()));
  });

  // ---- experiment ----
  struct Exper {
    std::string config, blob, out;
    std::vector<uint64_t> seeds;
  };
  auto ex = std::make_shared<Exper>();
  auto* exper = app.add_subcommand("experiment", "run the full replicated comparison protocol");
  exper->add_option("--config", ex->config, "JSON experiment config");
  exper->add_option("--override", ex->blob, "raw JSON merged over --config");
  auto* ex_out = exper->add_option("--out", ex->out, "output root override");
  auto* ex_seeds = exper->add_option("--seeds", ex->seeds, "replicate seeds")->delimiter(',');
  exper->callback([=] {
    json ov = base_overrides(ex->blob);
    if (ex_out->count()) ov["out"] = ex->out;
    if (ex_seeds->count()) ov["seeds"] = ex->seeds;
    const std::string ovs = dump_or_empty(ov);
    check(ms_run_experiment(cstr(ex->config), cstr(ovs)));
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    json err = {{"error", {{"code", 2}, {"status", "usage"}, {"message", e.what()}}}};
    std::cerr << err.dump() << "\n";
    return 2;
  } catch (const CliError& e) {
    json err = {{"error", {{"code", e.code}, {"status", e.status}, {"message", e.message}}}};
    std::cerr << err.dump() << "\n";
    return e.code;
  }
  return 0;
}
