// supcbm: command-line front end for the concept bottleneck toolkit.
//
//   supcbm prompts   --classes cat,dog --p 5 --q 6
//   supcbm ingest    --dump dump.json --out vocab.json
//   supcbm synth     --seed 7 --out-dir fixture
//   supcbm annotate  --vocab vocab.json --concepts concepts.json --data train.json --out train.ann.jsonl
//   supcbm train     --vocab vocab.json --data train.json --annotations train.ann.jsonl --out model.json
//   supcbm eval      --model model.json --vocab vocab.json --data test.json
//   supcbm leakage   --model model.json --vocab vocab.json ... --csv curves.csv
//   supcbm intervene --model model.json --vocab vocab.json --data test.json --row 0 --edit 12=0
//   supcbm serve     --model model.json --vocab vocab.json --port 8080
//
// Exit codes: 0 success, 1 data/validation error, 2 usage error.

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/cfg/helpers.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <pthread.h>
#include <signal.h>

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "supcbm/http_server.hpp"
#include "supcbm/supcbm.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kToolVersion = "0.1.0";

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw supcbm::DataError("cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw supcbm::DataError("cannot write " + p.string());
  out << text;
}

std::string file_sha256(const fs::path& p) { return supcbm::sha256_hex(read_text(p)); }

/// Reproducibility record written for every command.
class RunManifest {
public:
  explicit RunManifest(std::string command) : command_(std::move(command)), start_(std::chrono::steady_clock::now()) {
    doc_["tool"] = "supcbm";
    doc_["version"] = kToolVersion;
    doc_["command"] = command_;
    doc_["started_at"] = static_cast<long long>(std::time(nullptr));
    doc_["config"] = json::object();
    doc_["inputs"] = json::object();
    doc_["results"] = json::object();
  }

  json& config() { return doc_["config"]; }
  json& results() { return doc_["results"]; }
  void seed(std::uint64_t s) { doc_["seed"] = s; }
  void input(const std::string& role, const fs::path& p) {
    doc_["inputs"][role] = {{"path", p.string()}, {"sha256", file_sha256(p)}};
  }

  void write(const fs::path& path) {
    doc_["elapsed_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    write_text(path, doc_.dump(2) + "\n");
  }

private:
  std::string command_;
  std::chrono::steady_clock::time_point start_;
  json doc_;
};

supcbm::VocabularyBundle load_vocab(const fs::path& p) {
  const auto text = read_text(p);
  auto doc = json::parse(text, nullptr, false);
  if (doc.is_discarded()) throw supcbm::DataError(p.string() + ": malformed vocabulary document");
  return supcbm::vocabulary_from_json(doc);
}

struct LoadedModel {
  supcbm::SupCbmModel model;
  supcbm::ConceptVocabulary vocab;
  supcbm::Checkpoint checkpoint;
};

LoadedModel load_model(const fs::path& model_path, const fs::path& vocab_path, bool require_match = true) {
  auto bundle = load_vocab(vocab_path);
  auto ck = supcbm::load_checkpoint(model_path);
  if (require_match && ck.info.vocab_sha256 != supcbm::vocabulary_digest(bundle.vocabulary, bundle.matrix))
    throw supcbm::DataError("checkpoint " + model_path.string() + " was trained against a different vocabulary");
  return {{ck.layer, bundle.matrix}, std::move(bundle.vocabulary), ck};
}

void add_train_options(CLI::App* cmd, supcbm::TrainConfig& cfg) {
  cmd->add_option("--alpha", cfg.alpha, "Weight of the concept BCE term")->check(CLI::Range(0.0, 1.0))->capture_default_str();
  cmd->add_option("--lr", cfg.learning_rate, "Adam learning rate")->check(CLI::PositiveNumber)->capture_default_str();
  cmd->add_option("--beta1", cfg.beta1, "Adam beta1")->check(CLI::Range(0.0, 0.999999))->capture_default_str();
  cmd->add_option("--beta2", cfg.beta2, "Adam beta2")->check(CLI::Range(0.0, 0.999999))->capture_default_str();
  cmd->add_option("--adam-eps", cfg.epsilon, "Adam epsilon")->check(CLI::PositiveNumber)->capture_default_str();
  cmd->add_option("--epochs", cfg.epochs, "Training epochs")->capture_default_str();
  cmd->add_option("--batch-size", cfg.batch_size, "Mini-batch size")->check(CLI::PositiveNumber)->capture_default_str();
  cmd->add_option("--seed", cfg.seed, "Random seed")->capture_default_str();
}

std::vector<std::string> split_csv(const std::vector<std::string>& items) {
  std::vector<std::string> out;
  for (const auto& item : items) {
    std::stringstream ss(item);
    std::string part;
    while (std::getline(ss, part, ','))
      if (!part.empty()) out.push_back(part);
  }
  return out;
}

void serve_until_signal(httplib::Server& server, const std::string& host, int port) {
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);
  std::thread waiter([&] {
    int sig = 0;
    sigwait(&set, &sig);
    spdlog::info("signal {} received, shutting down", sig);
    server.stop();
  });
  spdlog::info("listening on http://{}:{}", host, port);
  const bool ok = server.listen(host, port);
  if (!ok) {
    pthread_kill(waiter.native_handle(), SIGTERM);
    waiter.join();
    throw supcbm::DataError("cannot bind " + host + ":" + std::to_string(port));
  }
  waiter.join();
}

}  // namespace

int main(int argc, char** argv) {
  spdlog::set_default_logger(spdlog::stderr_color_mt("supcbm"));
  if (const char* level = std::getenv("SUPCBM_LOG_LEVEL")) spdlog::cfg::helpers::load_levels(level);

  CLI::App app{"Concept bottleneck models with a fixed intervention matrix"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);
  std::string run_manifest_path;
  app.add_option("--run-manifest", run_manifest_path, "Where to write the run manifest (default: <command>.run.json)");

  // prompts
  auto* prompts = app.add_subcommand("prompts", "Print concept-generation prompts for a list of classes");
  std::vector<std::string> prompt_classes;
  std::string prompt_part;
  std::size_t prompt_p = 5, prompt_q = 6;
  bool prompt_json = false;
  prompts->add_option("--classes", prompt_classes, "Class names (comma-separated or repeated)")->required();
  prompts->add_option("--p", prompt_p, "Perceptual parts requested per class")->check(CLI::PositiveNumber)->capture_default_str();
  prompts->add_option("--q", prompt_q, "Descriptions requested per part")->check(CLI::PositiveNumber)->capture_default_str();
  prompts->add_option("--part", prompt_part, "Resolve the characteristics prompt for this part instead of {CEP}");
  prompts->add_flag("--json", prompt_json, "Emit JSON instead of plain text");

  // ingest
  auto* ingest = app.add_subcommand("ingest", "Validate a concept dump and build the vocabulary + intervention matrix");
  fs::path dump_path, ingest_out;
  std::size_t ingest_p = 0;
  ingest->add_option("--dump", dump_path, "Concept dump document")->required()->check(CLI::ExistingFile);
  ingest->add_option("--out", ingest_out, "Output vocabulary document")->required();
  ingest->add_option("--p", ingest_p, "Require exactly this many parts per class (0 = any, uniform)");

  // synth
  auto* synth = app.add_subcommand("synth", "Generate the synthetic desk-scale fixture");
  supcbm::SyntheticConfig sc;
  fs::path synth_dir = "fixture";
  bool no_share = false;
  synth->add_option("--out-dir", synth_dir, "Output directory")->capture_default_str();
  synth->add_option("--seed", sc.seed, "Random seed")->capture_default_str();
  synth->add_option("--classes", sc.num_classes, "Number of classes")->check(CLI::PositiveNumber)->capture_default_str();
  synth->add_option("--p", sc.p, "Parts per class")->check(CLI::PositiveNumber)->capture_default_str();
  synth->add_option("--q", sc.q, "Descriptions per part")->check(CLI::PositiveNumber)->capture_default_str();
  synth->add_option("--k", sc.k, "Pooling width recorded for downstream annotation")->check(CLI::PositiveNumber)->capture_default_str();
  synth->add_option("--dim", sc.dim, "Embedding dimension")->check(CLI::PositiveNumber)->capture_default_str();
  synth->add_option("--per-class", sc.images_per_class, "Images per class")->check(CLI::PositiveNumber)->capture_default_str();
  synth->add_option("--noise", sc.noise, "Noise scale (expected noise norm)")->check(CLI::NonNegativeNumber)->capture_default_str();
  synth->add_flag("--no-share", no_share, "Do not share the first part between class pairs");
  synth->add_flag("--duplicate-last-class", sc.duplicate_last_class, "Give the last class the previous class's concepts");

  // annotate
  auto* annotate = app.add_subcommand("annotate", "Label-aware concept annotation with concept pooling");
  fs::path ann_vocab, ann_concepts, ann_data, ann_out;
  std::size_t ann_k = 2;
  annotate->add_option("--vocab", ann_vocab)->required()->check(CLI::ExistingFile);
  annotate->add_option("--concepts", ann_concepts, "Concept text embeddings manifest")->required()->check(CLI::ExistingFile);
  annotate->add_option("--data", ann_data, "Labeled image embeddings manifest")->required()->check(CLI::ExistingFile);
  annotate->add_option("--k", ann_k, "Descriptions kept per part")->check(CLI::PositiveNumber)->capture_default_str();
  annotate->add_option("--out", ann_out, "Output JSON-lines annotations")->required();

  // train
  auto* train = app.add_subcommand("train", "Train the concept bottleneck layer");
  supcbm::TrainConfig tc;
  fs::path tr_vocab, tr_data, tr_ann, tr_dev, tr_out;
  train->add_option("--vocab", tr_vocab)->required()->check(CLI::ExistingFile);
  train->add_option("--data", tr_data, "Training split manifest")->required()->check(CLI::ExistingFile);
  train->add_option("--annotations", tr_ann)->required()->check(CLI::ExistingFile);
  train->add_option("--dev", tr_dev, "Dev split for per-epoch accuracy")->check(CLI::ExistingFile);
  train->add_option("--out", tr_out, "Checkpoint manifest")->required();
  add_train_options(train, tc);

  // eval
  auto* eval = app.add_subcommand("eval", "Report accuracy on a labeled split");
  fs::path ev_model, ev_vocab, ev_data;
  eval->add_option("--model", ev_model)->required()->check(CLI::ExistingFile);
  eval->add_option("--vocab", ev_vocab)->required()->check(CLI::ExistingFile);
  eval->add_option("--data", ev_data)->required()->check(CLI::ExistingFile);

  // leakage
  auto* leakage = app.add_subcommand("leakage", "Concept-removal leakage benchmark against baselines");
  supcbm::TrainConfig lc;
  fs::path lk_model, lk_vocab, lk_concepts, lk_train, lk_ann, lk_test, lk_csv, lk_json;
  std::vector<double> fractions = supcbm::kDefaultRemovalFractions;
  leakage->add_option("--model", lk_model)->required()->check(CLI::ExistingFile);
  leakage->add_option("--vocab", lk_vocab)->required()->check(CLI::ExistingFile);
  leakage->add_option("--concepts", lk_concepts)->required()->check(CLI::ExistingFile);
  leakage->add_option("--train", lk_train, "Training split for the baselines")->required()->check(CLI::ExistingFile);
  leakage->add_option("--annotations", lk_ann, "Training annotations for the FC ablation")->required()->check(CLI::ExistingFile);
  leakage->add_option("--test", lk_test, "Evaluation split")->required()->check(CLI::ExistingFile);
  leakage->add_option("--fractions", fractions, "Removal fractions, ascending, starting at 0")->delimiter(',');
  leakage->add_option("--csv", lk_csv, "Write curves as CSV");
  leakage->add_option("--json", lk_json, "Write a JSON summary");
  add_train_options(leakage, lc);

  // intervene
  auto* intervene = app.add_subcommand("intervene", "Override concept states for one sample and rescore");
  fs::path iv_model, iv_vocab, iv_data;
  std::size_t iv_row = 0;
  std::vector<std::string> iv_edits;
  intervene->add_option("--model", iv_model)->required()->check(CLI::ExistingFile);
  intervene->add_option("--vocab", iv_vocab)->required()->check(CLI::ExistingFile);
  intervene->add_option("--data", iv_data)->required()->check(CLI::ExistingFile);
  intervene->add_option("--row", iv_row, "Row of the data split")->capture_default_str();
  intervene->add_option("--edit", iv_edits, "ID=0, ID=1 or ID=clear (repeatable)");

  // serve
  auto* serve = app.add_subcommand("serve", "HTTP JSON inference and intervention API");
  fs::path sv_model, sv_vocab, sv_ui;
  std::string sv_host = "127.0.0.1";
  int sv_port = 8080;
  serve->add_option("--model", sv_model)->required()->check(CLI::ExistingFile);
  serve->add_option("--vocab", sv_vocab)->required()->check(CLI::ExistingFile);
  serve->add_option("--host", sv_host)->capture_default_str();
  serve->add_option("--port", sv_port)->check(CLI::Range(0, 65535))->capture_default_str();
  serve->add_option("--ui-dir", sv_ui, "Static UI bundle served under /ui")->check(CLI::ExistingDirectory);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  const auto* cmd = app.get_subcommands().front();
  RunManifest run(cmd->get_name());
  if (run_manifest_path.empty()) run_manifest_path = cmd->get_name() + ".run.json";
  run.config() = json::object();
  for (const auto* opt : cmd->get_options()) {
    if (opt->get_name() == "--help" || opt->get_name() == "-h") continue;
    if (opt->count() > 0) run.config()[opt->get_name()] = opt->as<std::string>();
    else if (!opt->get_default_str().empty()) run.config()[opt->get_name()] = opt->get_default_str();
  }

  try {
    if (cmd == prompts) {
      std::vector<supcbm::ClassLabel> classes;
      for (const auto& name : split_csv(prompt_classes)) classes.push_back({classes.size(), name});
      auto list = supcbm::emit_prompts(classes, prompt_p, prompt_q);
      json out = json::array();
      for (auto& pr : list) {
        if (pr.kind == supcbm::PromptKind::characteristics && !prompt_part.empty())
          pr.text = supcbm::characteristics_prompt(pr.class_name, prompt_part, prompt_q);
        const char* kind = pr.kind == supcbm::PromptKind::parts ? "parts" : "characteristics";
        if (prompt_json) out.push_back({{"class", pr.class_name}, {"kind", kind}, {"text", pr.text}});
        else std::cout << pr.text << '\n';
      }
      if (prompt_json) std::cout << out.dump(2) << '\n';
      run.results()["prompts"] = list.size();
    } else if (cmd == ingest) {
      run.input("dump", dump_path);
      supcbm::IngestOptions opts;
      if (ingest_p > 0) opts.parts_per_class = ingest_p;
      auto result = supcbm::ingest_concept_dump(read_text(dump_path), opts);
      for (const auto& w : result.warnings) spdlog::warn("{}", w);
      const auto matrix = supcbm::build_intervention_matrix(result.vocabulary);
      write_text(ingest_out, supcbm::to_json(result.vocabulary, matrix).dump(2) + "\n");
      std::size_t flagged = 0;
      for (const auto& o : supcbm::overlap_report(result.vocabulary, matrix)) {
        if (!o.indistinguishable()) continue;
        ++flagged;
        spdlog::warn("classes '{}' and '{}' share {} concepts; unique: {} / {}", result.vocabulary.classes[o.a].name,
                     result.vocabulary.classes[o.b].name, o.shared, o.only_a, o.only_b);
      }
      std::cout << "classes " << result.vocabulary.num_classes() << ", concepts " << result.vocabulary.num_concepts()
                << ", warnings " << result.warnings.size() << ", indistinguishable pairs " << flagged << '\n';
      run.results() = {{"classes", result.vocabulary.num_classes()},
                       {"concepts", result.vocabulary.num_concepts()},
                       {"warnings", result.warnings},
                       {"indistinguishable_pairs", flagged},
                       {"vocab_sha256", supcbm::vocabulary_digest(result.vocabulary, matrix)}};
    } else if (cmd == synth) {
      sc.share_first_part = !no_share;
      run.seed(sc.seed);
      const auto fx = supcbm::gen_synthetic(sc);
      fs::create_directories(synth_dir);
      write_text(synth_dir / "dump.json", fx.dump + "\n");
      write_text(synth_dir / "vocab.json", supcbm::to_json(fx.vocab, fx.matrix).dump(2) + "\n");
      supcbm::save_embeddings(synth_dir / "concepts.json", fx.concepts);
      supcbm::save_dataset(synth_dir / "train.json", fx.train);
      supcbm::save_dataset(synth_dir / "dev.json", fx.dev);
      supcbm::save_dataset(synth_dir / "test.json", fx.test);
      write_text(synth_dir / "generating.json", json(fx.generating).dump() + "\n");
      std::cout << "wrote fixture to " << synth_dir.string() << ": " << fx.vocab.num_concepts() << " concepts, "
                << fx.train.size() << "/" << fx.dev.size() << "/" << fx.test.size() << " train/dev/test images\n";
      run.results() = {{"concepts", fx.vocab.num_concepts()},
                       {"train", fx.train.size()},
                       {"dev", fx.dev.size()},
                       {"test", fx.test.size()},
                       {"vocab_sha256", supcbm::vocabulary_digest(fx.vocab, fx.matrix)}};
    } else if (cmd == annotate) {
      run.input("vocab", ann_vocab);
      run.input("concepts", ann_concepts);
      run.input("data", ann_data);
      const auto bundle = load_vocab(ann_vocab);
      const auto concepts = supcbm::load_embeddings(ann_concepts);
      const auto data = supcbm::load_dataset(ann_data);
      const auto ann = supcbm::annotate_dataset(data, bundle.vocabulary, bundle.matrix, concepts, ann_k);
      supcbm::save_annotations(ann_out, ann);
      std::cout << "annotated " << ann.size() << " images\n";
      run.results()["images"] = ann.size();
    } else if (cmd == train) {
      tc.validate();
      run.seed(tc.seed);
      run.config()["train"] = supcbm::to_json(tc);
      run.input("vocab", tr_vocab);
      run.input("data", tr_data);
      run.input("annotations", tr_ann);
      const auto bundle = load_vocab(tr_vocab);
      const auto data = supcbm::load_dataset(tr_data);
      const auto ann = supcbm::load_annotations(tr_ann, bundle.vocabulary.num_concepts());
      std::optional<supcbm::LabeledDataset> dev;
      if (!tr_dev.empty()) {
        run.input("dev", tr_dev);
        dev = supcbm::load_dataset(tr_dev);
      }
      const auto result = supcbm::train(data, ann, bundle.matrix, tc, dev ? &*dev : nullptr);
      json epochs = json::array();
      for (const auto& m : result.metrics) {
        spdlog::info("epoch {} loss {:.6f}{}", m.epoch, m.train_loss,
                     m.dev_accuracy ? fmt::format(" dev accuracy {:.4f}", *m.dev_accuracy) : "");
        epochs.push_back({{"epoch", m.epoch}, {"train_loss", m.train_loss}, {"dev_accuracy", m.dev_accuracy ? json(*m.dev_accuracy) : json()}});
      }
      supcbm::save_checkpoint(tr_out, result.model,
                              {tc.alpha, supcbm::vocabulary_digest(bundle.vocabulary, bundle.matrix), tc.seed,
                               bundle.vocabulary.num_classes()});
      std::cout << "saved checkpoint " << tr_out.string() << '\n';
      run.results()["epochs"] = std::move(epochs);
      run.results()["checkpoint_sha256"] = file_sha256(tr_out);
    } else if (cmd == eval) {
      run.input("model", ev_model);
      run.input("vocab", ev_vocab);
      run.input("data", ev_data);
      const auto lm = load_model(ev_model, ev_vocab);
      const auto data = supcbm::load_dataset(ev_data);
      const double acc = supcbm::accuracy(lm.model, data);
      std::size_t ambiguous = 0;
      for (std::size_t n = 0; n < data.size(); ++n) ambiguous += supcbm::predict(lm.model, data.embeddings.row(n)).ambiguous();
      std::cout << "accuracy " << acc << " (" << data.size() << " samples, " << ambiguous << " ambiguous)\n";
      run.results() = {{"accuracy", acc}, {"samples", data.size()}, {"ambiguous", ambiguous}};
    } else if (cmd == leakage) {
      lc.validate();
      run.seed(lc.seed);
      run.config()["train"] = supcbm::to_json(lc);
      for (auto [role, p] : {std::pair{"model", lk_model}, {"vocab", lk_vocab}, {"concepts", lk_concepts},
                             {"train", lk_train}, {"annotations", lk_ann}, {"test", lk_test}})
        run.input(role, p);
      const auto lm = load_model(lk_model, lk_vocab);
      const auto concepts = supcbm::load_embeddings(lk_concepts);
      const auto train_data = supcbm::load_dataset(lk_train);
      const auto test_data = supcbm::load_dataset(lk_test);
      const auto ann = supcbm::load_annotations(lk_ann, lm.vocab.num_concepts());
      const std::size_t L = lm.vocab.num_classes();
      spdlog::info("training baselines");
      const auto fc = supcbm::train_fc_ablation(train_data, ann, L, lc).model;
      const auto dummy = supcbm::train_dummy(train_data, L, lc).model;
      const auto proj = supcbm::cbm_proj(train_data, concepts, L, lc).model;
      const std::vector<supcbm::LeakageCurve> curves = {
          supcbm::leakage_curve(lm.model, test_data, fractions, "supcbm"),
          supcbm::leakage_curve(fc, test_data, fractions, "supcbm-fc"),
          supcbm::leakage_curve(dummy, test_data, fractions, "dummy"),
          supcbm::leakage_curve(proj, test_data, fractions, "cbm-proj")};
      supcbm::write_curves_csv(std::cout, curves);
      if (!lk_csv.empty()) {
        std::ostringstream ss;
        supcbm::write_curves_csv(ss, curves);
        write_text(lk_csv, ss.str());
      }
      auto summary = supcbm::curves_summary(curves, supcbm::tie_break_floor(test_data));
      if (!lk_json.empty()) write_text(lk_json, summary.dump(2) + "\n");
      run.results() = std::move(summary);
    } else if (cmd == intervene) {
      run.input("model", iv_model);
      run.input("vocab", iv_vocab);
      run.input("data", iv_data);
      const auto lm = load_model(iv_model, iv_vocab);
      const auto data = supcbm::load_dataset(iv_data);
      if (iv_row >= data.size()) throw supcbm::UsageError("--row " + std::to_string(iv_row) + " is out of range");
      supcbm::EditMap edits;
      for (const auto& e : iv_edits) {
        const auto eq = e.find('=');
        if (eq == std::string::npos) throw supcbm::UsageError("--edit expects ID=0|1|clear, got '" + e + "'");
        std::size_t id = 0;
        try {
          id = std::stoul(e.substr(0, eq));
        } catch (const std::exception&) {
          throw supcbm::UsageError("--edit: bad concept id in '" + e + "'");
        }
        const auto v = e.substr(eq + 1);
        if (v == "1") edits[id] = supcbm::EditAction::set_one;
        else if (v == "0") edits[id] = supcbm::EditAction::set_zero;
        else if (v == "clear") edits[id] = supcbm::EditAction::clear;
        else throw supcbm::UsageError("--edit: state must be 0, 1 or clear in '" + e + "'");
      }
      const auto r = supcbm::intervene(lm.model, data.embeddings.row(iv_row), edits);
      const json out = {{"image_id", data.embeddings.ids[iv_row]},
                        {"label", data.labels[iv_row]},
                        {"before", supcbm::to_json(r.before, lm.vocab)},
                        {"after", supcbm::to_json(r.after, lm.vocab)}};
      std::cout << out.dump(2) << '\n';
      run.results() = {{"before", r.before.predicted}, {"after", r.after.predicted}};
    } else if (cmd == serve) {
      run.input("model", sv_model);
      run.input("vocab", sv_vocab);
      auto lm = load_model(sv_model, sv_vocab, false);
      supcbm::InferenceService service(std::move(lm.model), std::move(lm.vocab), lm.checkpoint.info.vocab_sha256);
      if (!service.checksum_ok()) spdlog::error("vocabulary checksum mismatch: every endpoint will answer 409");
      httplib::Server server;
      supcbm::mount_routes(server, service, sv_ui.empty() ? std::nullopt : std::optional<fs::path>(sv_ui));
      serve_until_signal(server, sv_host, sv_port);
      run.results()["checksum_ok"] = service.checksum_ok();
    }
  } catch (const supcbm::UsageError& e) {
    spdlog::error("{}", e.what());
    return 2;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  try {
    run.write(run_manifest_path);
  } catch (const std::exception& e) {
    spdlog::error("cannot write run manifest: {}", e.what());
    return 1;
  }
  return 0;
}
