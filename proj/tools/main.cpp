// cbamnet: train/evaluate/explain/inspect/synth for the CBAM-CNN classifier.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage error.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cbamnet/checkpoint.hpp"
#include "cbamnet/data.hpp"
#include "cbamnet/gradcam.hpp"
#include "cbamnet/metrics.hpp"
#include "cbamnet/model.hpp"
#include "cbamnet/trainer.hpp"

extern "C" void openblas_set_num_threads(int);

namespace fs = std::filesystem;
using namespace cbamnet;

namespace {

// Argument-level failures detected after parsing; mapped to exit 2.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct GlobalOpts {
  std::uint64_t seed = 42;
  int threads = 0;  // 0 -> CBAMNET_THREADS or 1
};

void apply_threads(const GlobalOpts& g) {
  int threads = g.threads;
  if (threads <= 0) {
    const char* env = std::getenv("CBAMNET_THREADS");
    threads = env ? std::atoi(env) : 1;
    if (threads <= 0) threads = 1;
  }
  openblas_set_num_threads(threads);
}

SplitFractions parse_split(const std::string& text) {
  SplitFractions f;
  if (std::sscanf(text.c_str(), "%lf,%lf,%lf", &f.train, &f.val, &f.test) != 3)
    throw UsageError("--split expects three comma-separated fractions");
  if (std::abs(f.train + f.val + f.test - 1.0) > 1e-6)
    throw UsageError("--split fractions must sum to 1");
  return f;
}

struct SplitImages {
  std::vector<Tensor> xs;
  std::vector<int> ys;
};

SplitImages load_split(const DatasetIndex& index,
                       const std::vector<std::int64_t>& ids) {
  SplitImages out;
  out.xs = load_images(index, ids);
  for (std::int64_t i : ids)
    out.ys.push_back(index.samples.at(i).class_index);
  return out;
}

int cmd_train(const GlobalOpts& g, const std::string& data_dir,
              const std::string& out_path, int epochs, int batch_size,
              float lr, float dropout, int reduction, const std::string& split,
              bool augment_train) {
  const SplitFractions fractions = parse_split(split);
  DatasetIndex index = scan_dataset(data_dir);
  SplitAssignment assignment = stratified_split(index, g.seed, fractions);

  std::printf(
      "train: classes=%d images=%zu epochs=%d batch=%d lr=%g dropout=%g "
      "reduction=%d seed=%llu augment=%d\n",
      index.num_classes(), index.samples.size(), epochs, batch_size,
      static_cast<double>(lr), static_cast<double>(dropout), reduction,
      static_cast<unsigned long long>(g.seed), augment_train ? 1 : 0);

  ModelSpec spec;
  spec.num_classes = index.num_classes();
  spec.dropout_rate = dropout;
  spec.reduction_ratio = reduction;
  Model model(spec, g.seed);

  SplitImages train, val;
  for (std::int64_t i : assignment.train) {
    const auto& sample = index.samples.at(i);
    ImageF img = resize_bilinear(decode_image(sample.path), spec.input_size,
                                 spec.input_size);
    train.xs.push_back(image_to_tensor(img));
    train.ys.push_back(sample.class_index);
    if (augment_train)
      for (const ImageF& aug :
           augment_image(img, g.seed ^ (0x9e3779b97f4a7c15ULL * (i + 1)))) {
        train.xs.push_back(image_to_tensor(aug));
        train.ys.push_back(sample.class_index);
      }
  }
  val = load_split(index, assignment.val);

  TrainConfig cfg;
  cfg.epochs = epochs;
  cfg.batch_size = batch_size;
  cfg.lr = lr;
  cfg.seed = g.seed;
  cfg.checkpoint_path = out_path;

  const fs::path out_dir = fs::path(out_path).parent_path();
  save_split_audit(index, assignment,
                   out_dir.empty() ? fs::path("split_audit.tsv")
                                   : out_dir / "split_audit.tsv");
  FitResult result = fit(model, train.xs, train.ys, val.xs, val.ys, cfg);
  write_history_csv(result.history, out_dir.empty()
                                        ? fs::path("history.csv")
                                        : out_dir / "history.csv");
  std::printf("best val accuracy %.4f at epoch %d; checkpoint %s\n",
              result.best_val_acc, result.best_epoch, out_path.c_str());
  return 0;
}

int cmd_evaluate(const GlobalOpts& g, const std::string& data_dir,
                 const std::string& model_path, const std::string& which,
                 const std::string& out_path, const std::string& audit_path) {
  if (which != "train" && which != "val" && which != "test")
    throw UsageError("--split must be train, val, or test");
  DatasetIndex index = scan_dataset(data_dir);
  SplitAssignment assignment =
      audit_path.empty() ? stratified_split(index, g.seed)
                         : load_split_audit(index, audit_path);
  const auto& ids = which == "train"  ? assignment.train
                    : which == "val" ? assignment.val
                                     : assignment.test;
  if (ids.empty()) throw UsageError("selected split is empty");

  Model model = load_checkpoint(model_path);
  if (model.spec().num_classes != index.num_classes())
    throw Error("checkpoint expects " +
                std::to_string(model.spec().num_classes) +
                " classes, dataset has " + std::to_string(index.num_classes()));
  SplitImages split = load_split(index, ids);
  EvalResult eval = evaluate_split(model, split.xs, split.ys);

  ConfusionMatrix cm = confusion_matrix(split.ys, eval.predictions,
                                        index.num_classes(), index.class_names);
  ClassMetrics metrics = precision_recall_f1(cm);
  auto auc = roc_auc_ovr(eval.probabilities, split.ys);

  std::ofstream out(out_path, std::ios::trunc);
  if (!out) throw Error("cannot write " + out_path);
  out << metrics_report_json(cm, metrics, auc);
  std::printf("accuracy %.4f  macro precision %.4f  recall %.4f  f1 %.4f\n",
              metrics.accuracy, metrics.macro_precision, metrics.macro_recall,
              metrics.macro_f1);
  return 0;
}

int cmd_explain(const std::string& model_path, const std::string& image_path,
                int target_class, const std::string& layer, float alpha,
                const std::string& out_dir) {
  Model model = load_checkpoint(model_path);
  const int k = model.spec().num_classes;
  if (target_class >= k)
    throw UsageError("--class " + std::to_string(target_class) +
                     " out of range for " + std::to_string(k) + " classes");
  const auto valid = model.capture_names();
  if (std::find(valid.begin(), valid.end(), layer) == valid.end()) {
    std::string msg = "unknown --layer \"" + layer + "\"; valid:";
    for (const auto& name : valid) msg += " " + name;
    throw UsageError(msg);
  }
  ImageF img = resize_bilinear(decode_image(image_path), model.spec().input_size,
                               model.spec().input_size);
  Tensor x = image_to_tensor(img);

  EvalResult probe;
  {
    std::vector<Tensor> xs{x};
    std::vector<int> ys{0};
    probe = evaluate_split(model, xs, ys, 1);
  }
  const int predicted = probe.predictions[0];
  const int chosen = target_class < 0 ? predicted : target_class;
  std::printf("predicted class %d (p=%.4f); explaining class %d via %s\n",
              predicted, probe.probabilities[0][predicted], chosen,
              layer.c_str());

  fs::create_directories(out_dir);
  Heatmap map = compute_gradcam(model, x, chosen, layer);
  const fs::path stem = fs::path(out_dir) / fs::path(image_path).stem();
  for (const auto& p : write_explanation(map, img, alpha, stem))
    std::printf("wrote %s\n", p.string().c_str());
  if (map.all_zero) std::printf("note: zero-gradient input, all-zero heatmap\n");
  return 0;
}

int cmd_inspect(const std::string& model_path, bool default_spec) {
  if (default_spec != model_path.empty())
    throw UsageError("inspect needs exactly one of --model or --default-spec");
  if (default_spec) {
    Model model(ModelSpec{}, /*seed=*/0);
    std::fputs(model.parameter_table().c_str(), stdout);
  } else {
    Model model = load_checkpoint(model_path);
    std::fputs(model.parameter_table().c_str(), stdout);
  }
  return 0;
}

int cmd_synth(const GlobalOpts& g, const std::string& out_dir, int classes,
              int per_class, float noise) {
  if (per_class < 3)
    throw UsageError("--per-class must be at least 3 (split minimum)");
  DatasetIndex index = synth_dataset(out_dir, classes, per_class, g.seed, noise);
  std::printf("wrote %zu images across %d classes under %s\n",
              index.samples.size(), index.num_classes(), out_dir.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"CBAM-CNN leaf-disease classifier"};
  app.require_subcommand(1);

  GlobalOpts g;
  app.add_option("--seed", g.seed, "Global RNG seed")->capture_default_str();
  app.add_option("--threads", g.threads,
                 "BLAS/worker threads (default: CBAMNET_THREADS or 1)");

  // train
  auto* train = app.add_subcommand("train", "Train a model");
  std::string train_data, train_out, train_split = "0.8,0.1,0.1";
  int epochs = 300, batch_size = 64, reduction = 8;
  float lr = 0.001f, dropout = 0.5f;
  bool augment_train = false;
  train->add_option("--data", train_data, "Dataset root (class folders)")
      ->required();
  train->add_option("--out", train_out, "Checkpoint output path")->required();
  train->add_option("--epochs", epochs, "Training epochs")
      ->capture_default_str();
  train->add_option("--batch-size", batch_size, "Batch size")
      ->capture_default_str();
  train->add_option("--lr", lr, "Adam learning rate")->capture_default_str();
  train->add_option("--dropout", dropout, "Dropout rate")
      ->capture_default_str();
  train->add_option("--reduction-ratio", reduction, "CBAM reduction ratio")
      ->capture_default_str();
  train->add_option("--split", train_split, "train,val,test fractions")
      ->capture_default_str();
  train->add_flag("--augment-train", augment_train,
                  "Augment the training split 5x");

  // evaluate
  auto* evaluate = app.add_subcommand("evaluate", "Evaluate a checkpoint");
  std::string eval_data, eval_model, eval_split = "test",
              eval_out = "metrics.json", eval_audit;
  evaluate->add_option("--data", eval_data, "Dataset root")->required();
  evaluate->add_option("--model", eval_model, "Checkpoint path")->required();
  evaluate->add_option("--split", eval_split, "Split to evaluate")
      ->capture_default_str();
  evaluate->add_option("--out", eval_out, "Metrics JSON output path")
      ->capture_default_str();
  evaluate->add_option("--audit", eval_audit,
                       "Split-audit file (default: re-derive from --seed)");

  // explain
  auto* explain = app.add_subcommand("explain", "Grad-CAM explanation");
  std::string ex_model, ex_image, ex_layer = "block4", ex_out = ".";
  int ex_class = -1;
  float ex_alpha = 0.4f;
  explain->add_option("--model", ex_model, "Checkpoint path")->required();
  explain->add_option("--image", ex_image, "Image to explain")->required();
  explain->add_option("--class", ex_class,
                      "Target class (default: predicted argmax)");
  explain->add_option("--layer", ex_layer, "Attention block to explain")
      ->capture_default_str();
  explain->add_option("--alpha", ex_alpha, "Overlay blend weight")
      ->capture_default_str();
  explain->add_option("--out-dir", ex_out, "Output directory")
      ->capture_default_str();

  // inspect
  auto* inspect = app.add_subcommand("inspect", "Print the parameter table");
  std::string in_model;
  bool in_default = false;
  inspect->add_option("--model", in_model, "Checkpoint path");
  inspect->add_flag("--default-spec", in_default,
                    "Inspect the default architecture");

  // synth
  auto* synth = app.add_subcommand("synth", "Write a synthetic dataset");
  std::string sy_out;
  int sy_classes = 3, sy_per_class = 0;
  float sy_noise = 0.02f;
  synth->add_option("--out", sy_out, "Output directory")->required();
  synth->add_option("--classes", sy_classes, "Number of classes (2-4)")
      ->capture_default_str();
  synth->add_option("--per-class", sy_per_class, "Images per class")
      ->required();
  synth->add_option("--noise", sy_noise, "Gaussian noise sigma")
      ->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    apply_threads(g);
    if (train->parsed())
      return cmd_train(g, train_data, train_out, epochs, batch_size, lr,
                       dropout, reduction, train_split, augment_train);
    if (evaluate->parsed())
      return cmd_evaluate(g, eval_data, eval_model, eval_split, eval_out,
                          eval_audit);
    if (explain->parsed())
      return cmd_explain(ex_model, ex_image, ex_class, ex_layer, ex_alpha,
                         ex_out);
    if (inspect->parsed()) return cmd_inspect(in_model, in_default);
    if (synth->parsed())
      return cmd_synth(g, sy_out, sy_classes, sy_per_class, sy_noise);
  } catch (const UsageError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 2;
}
