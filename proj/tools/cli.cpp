#include "cli.hpp"

#include <openssl/evp.h>
#include <unistd.h>

#include <CLI11.hpp>
#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>

#include "xlsum/datapipe.hpp"
#include "xlsum/errors.hpp"
#include "xlsum/metrics.hpp"
#include "xlsum/training.hpp"
#include "xlsum/xsim.hpp"

namespace xlsum::cli {

namespace fs = std::filesystem;
using nlohmann::json;

std::string git_blob_sha1(std::string_view content) {
  const std::string header = "blob " + std::to_string(content.size()) + '\0';
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx || !EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) ||
      !EVP_DigestUpdate(ctx, header.data(), header.size()) ||
      !EVP_DigestUpdate(ctx, content.data(), content.size()) || !EVP_DigestFinal_ex(ctx, digest, &len)) {
    EVP_MD_CTX_free(ctx);
    throw Error("hash", "SHA-1 computation failed");
  }
  EVP_MD_CTX_free(ctx);
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
  return os.str();
}

std::string read_file(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_file_atomic(const fs::path& path, std::string_view content) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create directory " + path.parent_path().string() + ": " + ec.message());
  }
  fs::path tmp = path;
  tmp += ".tmp." + std::to_string(::getpid());
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write " + path.string());
    f.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!f) throw IoError("failed writing " + path.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw IoError("cannot move output into place at " + path.string());
  }
}

namespace {

std::string iso_utc(std::time_t t) {
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// Reproducible builds convention: a fixed SOURCE_DATE_EPOCH replaces the clock.
std::string now_utc() {
  if (const char* e = std::getenv("SOURCE_DATE_EPOCH"); e && *e) {
    try {
      return iso_utc(static_cast<std::time_t>(std::stoll(e)));
    } catch (const std::exception&) {
      throw ContractError("SOURCE_DATE_EPOCH is not an integer: " + std::string(e));
    }
  }
  return iso_utc(std::chrono::system_clock::to_time_t(std::chrono::system_clock::now()));
}

std::string default_out_dir() {
  const char* e = std::getenv("XLS_OUT_DIR");
  return e && *e ? e : "xls_out";
}

// Collects what a command read and wrote; written last, so its presence
// means every output is in place.
class Manifest {
 public:
  explicit Manifest(std::string command) : command_(std::move(command)), started_(now_utc()) {}

  json config = json::object();
  json seeds = json::object();

  void input(const fs::path& p) { inputs_.push_back({{"path", p.string()}, {"sha1", git_blob_sha1(read_file(p))}}); }
  void output(const fs::path& p, std::string_view content) {
    write_file_atomic(p, content);
    outputs_.push_back({{"path", p.string()}, {"sha1", git_blob_sha1(content)}});
  }
  void finish(const fs::path& path) const {
    json j{{"command", command_},
           {"config", config},
           {"seeds", seeds},
           {"inputs", inputs_},
           {"outputs", outputs_},
           {"timestamps", {{"started", started_}, {"finished", now_utc()}}}};
    write_file_atomic(path, j.dump(2) + "\n");
  }

 private:
  std::string command_;
  std::string started_;
  json inputs_ = json::array();
  json outputs_ = json::array();
};

json read_json_file(const fs::path& p) {
  try {
    return json::parse(read_file(p));
  } catch (const json::exception& e) {
    throw FormatError(p.string() + ": " + e.what());
  }
}

void require_file(const std::string& path, const std::string& what, const std::string& hint) {
  if (path.empty() || !fs::exists(path))
    throw PrerequisiteError(what + " not found" + (path.empty() ? "" : " at " + path) + "; " + hint);
}

std::vector<std::string> read_lines(const std::string& text) {
  std::vector<std::string> lines;
  std::istringstream is(text);
  for (std::string line; std::getline(is, line);) lines.push_back(line);
  return lines;
}

std::string join_lines(const std::vector<std::string>& lines) {
  std::string out;
  for (const auto& l : lines) out += l + "\n";
  return out;
}

struct Loaded {
  nn::XlsModel model;
  train::Vocabs vocabs;
  json metadata;
};

Loaded load_model(const std::string& path) {
  require_file(path, "checkpoint", "run pretrain first");
  auto ckpt = nn::load_checkpoint(path);
  if (!ckpt.metadata.contains("vocabs")) throw FormatError(path + ": checkpoint has no vocabularies");
  return {ckpt.model, train::Vocabs::from_json(ckpt.metadata.at("vocabs")), ckpt.metadata};
}

std::optional<xsim::SimilarityModel> load_xsim(const std::string& path) {
  if (path.empty()) return std::nullopt;
  require_file(path, "similarity model", "run train-xsim first");
  return xsim::SimilarityModel::deserialize(read_file(path));
}

std::vector<train::XlsItem> prepare_all(const std::vector<data::Example>& examples, const train::Vocabs& v) {
  std::vector<train::XlsItem> items;
  for (const auto& e : examples) items.push_back(train::prepare_xls(e, v));
  return items;
}

// ---- commands ---------------------------------------------------------------

struct DatagenArgs {
  std::uint64_t seed = 1;
  std::size_t n = 1000;
  std::size_t n_test = 0;
  double noise = 0.1;
  std::size_t vocab_size = 50;
  std::string out;
};

void cmd_datagen(const DatagenArgs& a, std::ostream& out) {
  data::SyntheticSpec spec;
  spec.seed = a.seed;
  spec.vocab_size = a.vocab_size;
  spec.mt_noise_rate = a.noise;
  spec.validate();
  const fs::path dir = a.out;
  Manifest m("datagen");
  m.config = {{"n", a.n}, {"n_test", a.n_test}, {"noise", a.noise}, {"vocab_size", a.vocab_size}, {"out", a.out}};
  m.seeds = {{"seed", a.seed}};
  const auto corpus = data::generate_synthetic(spec, a.n);
  m.output(dir / "examples.jsonl", data::examples_to_jsonl(corpus.examples));
  m.output(dir / "parallel.jsonl", data::parallel_to_jsonl(corpus.parallel));
  if (a.n_test > 0) {
    const auto test = data::generate_synthetic(spec, a.n_test, a.n);
    m.output(dir / "test.jsonl", data::examples_to_jsonl(test.examples));
  }
  m.output(dir / "synthetic_spec.json", data::spec_to_json(spec, corpus.lexicon).dump(2) + "\n");
  m.finish(dir / "manifest.json");
  out << "wrote " << a.n << " examples and " << corpus.parallel.size() << " parallel pairs to " << dir.string()
      << "\n";
}

struct BuildCorpusArgs {
  std::string in;
  std::string spec;
  std::string out;
  std::string name = "corpus";
  std::uint64_t seed = 1;
  std::optional<double> noise;
  double tau = 0.6;
  std::string mode = "keyword";
  std::string teacher;
  std::size_t teacher_epochs = 10;
  std::size_t extract_top_k = 0;
};

void cmd_build_corpus(const BuildCorpusArgs& a, std::ostream& out) {
  if (a.mode != "sentence" && a.mode != "keyword" && a.mode != "none")
    throw ContractError("--mode must be sentence, keyword or none");
  require_file(a.in, "input examples", "run datagen first");
  require_file(a.spec, "synthetic spec", "run datagen first");
  const fs::path dir = a.out;
  Manifest m("build-corpus");
  m.input(a.in);
  m.input(a.spec);
  const auto [spec, lexicon] = data::spec_from_json(read_json_file(a.spec));
  const double noise = a.noise.value_or(spec.mt_noise_rate);
  m.config = {{"in", a.in},   {"spec", a.spec},      {"out", a.out},
              {"noise", noise}, {"tau", a.tau},      {"mode", a.mode},
              {"name", a.name}, {"teacher", a.teacher}, {"teacher_epochs", a.teacher_epochs},
              {"extract_top_k", a.extract_top_k}};
  m.seeds = {{"seed", a.seed}};

  const auto examples = data::examples_from_jsonl(read_file(a.in));
  data::ToyTranslator translator{&lexicon, noise, a.seed};
  auto result = data::build_pseudo_corpus(examples, translator, a.tau);

  std::ostringstream rt;
  rt << std::setprecision(17) << "id,round_trip_rouge_l,kept\n";
  for (std::size_t i = 0; i < examples.size(); ++i)
    rt << examples[i].id << ',' << result.round_trip_rouge[i] << ','
       << (std::find(result.dropped_ids.begin(), result.dropped_ids.end(), examples[i].id) ==
                   result.dropped_ids.end()
               ? 1
               : 0)
       << '\n';

  std::optional<train::XlsModel> teacher_model;
  std::optional<data::Tokenizer> teacher_vocab;
  const bool needs_teacher = a.mode == "sentence" || a.extract_top_k > 0;
  if (needs_teacher) {
    if (!a.teacher.empty()) {
      require_file(a.teacher, "teacher checkpoint", "omit --teacher to train one");
      m.input(a.teacher);
      auto ckpt = nn::load_checkpoint(a.teacher);
      teacher_model = ckpt.model;
      teacher_vocab = data::Tokenizer::from_json(ckpt.metadata.at("src_vocab"));
    } else {
      std::vector<std::string> articles;
      for (const auto& e : examples) articles.push_back(e.article_src);
      teacher_vocab = data::Tokenizer::build(articles);
      train::TeacherConfig tc;
      tc.seed = a.seed;
      tc.epochs = a.teacher_epochs;
      auto trained = train::train_teacher(examples, *teacher_vocab, tc);
      teacher_model = trained.model;
      m.output(dir / "teacher.ckpt", nn::checkpoint_bytes(*teacher_model, {{"src_vocab", teacher_vocab->to_json()},
                                                                          {"teacher_config", tc.to_json()}}));
      m.output(dir / "teacher_trace.csv", train::trace_csv(trained.trace));
    }
  }
  std::optional<data::SentenceScorer> scorer;
  if (teacher_model) scorer = train::teacher_scorer(*teacher_model, *teacher_vocab);

  for (auto& e : result.kept) {
    if (a.extract_top_k > 0) e = data::hard_extract_top_k(e, *scorer, a.extract_top_k);
    if (a.mode == "none") continue;
    const auto mode = data::parse_unit_mode(a.mode);
    e.salience = data::make_salience_labels(e, mode, scorer ? &*scorer : nullptr);
    e.unit_mode = mode;
  }
  m.output(dir / (a.name + ".jsonl"), data::examples_to_jsonl(result.kept));
  m.output(dir / (a.name + "_round_trip.csv"), rt.str());
  m.finish(dir / (a.name + "_manifest.json"));
  out << "kept " << result.kept.size() << " of " << examples.size() << " examples (tau " << a.tau << ")\n";
}

struct TrainXsimArgs {
  std::string parallel;
  std::string out;
  xsim::XsimConfig cfg;
};

void cmd_train_xsim(const TrainXsimArgs& a, std::ostream& out) {
  require_file(a.parallel, "parallel corpus", "run datagen first");
  const fs::path dir = a.out;
  Manifest m("train-xsim");
  m.input(a.parallel);
  m.config = {{"parallel", a.parallel}, {"out", a.out},       {"dim", a.cfg.dim},
              {"margin", a.cfg.margin}, {"batch", a.cfg.batch_size}, {"epochs", a.cfg.epochs},
              {"lr", a.cfg.lr},         {"init_scale", a.cfg.init_scale}};
  m.seeds = {{"seed", a.cfg.seed}};
  const auto pairs = data::parallel_from_jsonl(read_file(a.parallel));
  const auto result = xsim::train_similarity(pairs, a.cfg);
  std::vector<train::TraceRow> trace{{0, "xsim_margin", result.initial_loss}};
  for (std::size_t e = 0; e < result.epoch_loss.size(); ++e)
    trace.push_back({e + 1, "xsim_margin", result.epoch_loss[e]});
  m.output(dir / "xsim.model", result.model.serialize());
  m.output(dir / "xsim_loss.csv", train::trace_csv(trace));
  m.finish(dir / "xsim_manifest.json");
  out << "margin loss " << result.initial_loss << " -> "
      << (result.epoch_loss.empty() ? result.initial_loss : result.epoch_loss.back()) << "\n";
}

struct PretrainArgs {
  std::string corpus;
  std::string parallel;
  std::string recipe = "MLE_XLS_MT_DIS";
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs;
  std::string out;
};

void cmd_pretrain(const PretrainArgs& a, std::ostream& out) {
  const auto recipe = train::parse_recipe(a.recipe);
  if (train::is_rl(recipe)) throw ContractError("recipe " + a.recipe + " is a fine-tuning recipe; use rl-finetune");
  require_file(a.corpus, "pseudo corpus", "run build-corpus first");
  const fs::path dir = a.out;
  Manifest m("pretrain");
  m.input(a.corpus);
  train::TrainConfig cfg;
  if (!a.config.empty()) {
    require_file(a.config, "training config", "check --config");
    m.input(a.config);
    cfg = train::TrainConfig::from_json(read_json_file(a.config));
  }
  if (a.seed) cfg.seed = *a.seed;
  if (a.epochs) cfg.epochs = *a.epochs;
  cfg.validate();

  const auto examples = data::examples_from_jsonl(read_file(a.corpus));
  std::vector<data::ParallelPair> parallel;
  if (train::uses_mt(recipe)) {
    require_file(a.parallel, "parallel corpus", "pass --parallel from datagen");
    m.input(a.parallel);
    parallel = data::parallel_from_jsonl(read_file(a.parallel));
  }
  const auto vocabs = train::build_vocabs(examples, parallel);
  std::vector<train::MtItem> mt;
  for (const auto& p : parallel) mt.push_back(train::prepare_mt(p, vocabs));
  const auto xls = prepare_all(examples, vocabs);

  cfg.model.src_vocab_size = vocabs.src.size();
  cfg.model.tgt_vocab_size = vocabs.tgt.size();
  nn::XlsModel model(cfg.model, cfg.seed);
  m.config = {{"corpus", a.corpus}, {"parallel", a.parallel}, {"recipe", a.recipe}, {"train", cfg.to_json()}};
  m.seeds = {{"seed", cfg.seed}};
  const auto result = train::pretrain(model, xls, mt, recipe, cfg);

  m.output(dir / "model.ckpt", nn::checkpoint_bytes(model, {{"recipe", a.recipe},
                                                           {"train_config", cfg.to_json()},
                                                           {"vocabs", vocabs.to_json()}}));
  m.output(dir / "pretrain_trace.csv", train::trace_csv(result.trace));
  m.finish(dir / "pretrain_manifest.json");
  out << "trained " << a.recipe << " for " << cfg.epochs << " epochs (" << result.trace.size() << " trace rows)\n";
}

struct RlArgs {
  std::string checkpoint;
  std::string corpus;
  std::string validation;
  std::string recipe = "RL_XSIM";
  std::string xsim;
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs;
  std::string out;
};

void cmd_rl_finetune(const RlArgs& a, std::ostream& out) {
  const auto recipe = train::parse_recipe(a.recipe);
  if (!train::is_rl(recipe)) throw ContractError("recipe " + a.recipe + " is a pre-training recipe; use pretrain");
  train::RlConfig cfg;
  if (!a.config.empty()) {
    require_file(a.config, "fine-tuning config", "check --config");
    cfg = train::RlConfig::from_json(read_json_file(a.config));
  }
  cfg.reward = train::reward_kind_of(recipe);
  if (a.seed) cfg.seed = *a.seed;
  if (a.epochs) cfg.epochs = *a.epochs;
  cfg.validate();
  // Fail on missing prerequisites before any expensive work.
  if (cfg.reward != train::RewardKind::RougeL)
    require_file(a.xsim, "similarity model for " + a.recipe, "run train-xsim and pass --xsim");
  auto loaded = load_model(a.checkpoint);
  require_file(a.corpus, "pseudo corpus", "run build-corpus first");

  const fs::path dir = a.out;
  Manifest m("rl-finetune");
  m.input(a.checkpoint);
  m.input(a.corpus);
  if (!a.config.empty()) m.input(a.config);
  const auto sim = cfg.reward == train::RewardKind::RougeL ? std::nullopt : load_xsim(a.xsim);
  if (sim) m.input(a.xsim);
  const train::RewardContext ctx{cfg.reward, sim ? &*sim : nullptr};
  const auto reward_fn = train::make_reward_fn(ctx, loaded.vocabs.tgt);

  const auto train_items = prepare_all(data::examples_from_jsonl(read_file(a.corpus)), loaded.vocabs);
  std::vector<train::XlsItem> val_items;
  if (!a.validation.empty()) {
    require_file(a.validation, "validation corpus", "check --validation");
    m.input(a.validation);
    val_items = prepare_all(data::examples_from_jsonl(read_file(a.validation)), loaded.vocabs);
  }
  m.config = {{"checkpoint", a.checkpoint}, {"corpus", a.corpus}, {"validation", a.validation},
              {"recipe", a.recipe},         {"xsim", a.xsim},     {"rl", cfg.to_json()}};
  m.seeds = {{"seed", cfg.seed}};
  const auto result = train::rl_finetune(loaded.model, train_items, val_items, cfg, reward_fn);

  auto meta = loaded.metadata;
  meta.erase("config");
  meta["recipe"] = a.recipe;
  meta["rl_config"] = cfg.to_json();
  m.output(dir / "model.ckpt", nn::checkpoint_bytes(loaded.model, meta));
  m.output(dir / "rl_trace.csv", train::trace_csv(result.trace));
  m.finish(dir / "rl_manifest.json");
  out << "fine-tuned with " << a.recipe << "; best epoch " << result.best_epoch << "\n";
}

struct EvaluateArgs {
  std::string checkpoint;
  std::string predictions;
  std::string test;
  std::string xsim;
  std::string segmentation = "word";
  std::size_t max_len = 48;
  std::string out;
};

void cmd_evaluate(const EvaluateArgs& a, std::ostream& out) {
  if (a.checkpoint.empty() == a.predictions.empty())
    throw ContractError("pass exactly one of --checkpoint and --predictions");
  require_file(a.test, "test corpus", "run build-corpus on the test split");
  const fs::path dir = a.out;
  Manifest m("evaluate");
  m.input(a.test);
  const auto examples = data::examples_from_jsonl(read_file(a.test));
  const auto sim = load_xsim(a.xsim);
  if (sim) m.input(a.xsim);

  std::vector<std::string> hyps;
  if (!a.checkpoint.empty()) {
    const auto loaded = load_model(a.checkpoint);
    m.input(a.checkpoint);
    for (const auto& e : examples) hyps.push_back(train::summarize(loaded.model, loaded.vocabs, e.article_src, a.max_len));
  } else {
    require_file(a.predictions, "predictions file", "check --predictions");
    m.input(a.predictions);
    hyps = read_lines(read_file(a.predictions));
    if (hyps.size() != examples.size())
      throw ContractError("predictions have " + std::to_string(hyps.size()) + " lines but the test corpus has " +
                          std::to_string(examples.size()) + " examples");
  }
  std::vector<std::pair<std::string, std::string>> pairs;
  double xsim_total = 0.0;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    if (!examples[i].pseudo_summary_tgt)
      throw PrerequisiteError("test example " + examples[i].id + " has no target summary; run build-corpus on it");
    pairs.emplace_back(hyps[i], *examples[i].pseudo_summary_tgt);
    if (sim) xsim_total += sim->score(hyps[i], examples[i].summary_src).value;
  }
  auto report = metrics::corpus_report(pairs, metrics::parse_segmentation(a.segmentation));
  if (sim && !examples.empty()) report.xsim = xsim_total / static_cast<double>(examples.size());
  m.config = {{"checkpoint", a.checkpoint}, {"predictions", a.predictions}, {"test", a.test},
              {"xsim", a.xsim},             {"segmentation", a.segmentation}, {"max_len", a.max_len}};
  const auto table = metrics::format_report_table(report);
  m.output(dir / "report.txt", table);
  m.output(dir / "report.kv", metrics::format_report_kv(report));
  m.output(dir / "length_buckets.csv", metrics::format_bucket_csv(report));
  m.output(dir / "predictions.txt", join_lines(hyps));
  m.finish(dir / "evaluate_manifest.json");
  out << table;
}

struct GenerateArgs {
  std::string checkpoint;
  std::string input;
  std::string output;
  std::size_t max_len = 48;
};

void cmd_generate(const GenerateArgs& a, std::ostream& out) {
  const auto loaded = load_model(a.checkpoint);
  require_file(a.input, "input file", "pass one article per line");
  Manifest m("generate");
  m.input(a.checkpoint);
  m.input(a.input);
  m.config = {{"checkpoint", a.checkpoint}, {"input", a.input}, {"output", a.output}, {"max_len", a.max_len}};
  std::vector<std::string> lines;
  for (const auto& article : read_lines(read_file(a.input)))
    lines.push_back(train::summarize(loaded.model, loaded.vocabs, article, a.max_len));
  m.output(a.output, join_lines(lines));
  fs::path manifest = a.output;
  manifest += ".manifest.json";
  m.finish(manifest);
  out << "wrote " << lines.size() << " summaries to " << a.output << "\n";
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Cross-lingual summarization toolkit"};
  app.require_subcommand(1);
  const std::string out_default = default_out_dir();

  DatagenArgs dg;
  dg.out = out_default;
  auto* datagen = app.add_subcommand("datagen", "Generate a synthetic corpus and parallel data");
  datagen->add_option("--seed", dg.seed);
  datagen->add_option("--n", dg.n, "Number of training articles");
  datagen->add_option("--n-test", dg.n_test, "Number of held-out articles");
  datagen->add_option("--noise", dg.noise, "Toy translation noise rate recorded in the spec")->check(CLI::Range(0.0, 1.0));
  datagen->add_option("--vocab-size", dg.vocab_size);
  datagen->add_option("--out", dg.out);

  BuildCorpusArgs bc;
  bc.out = out_default;
  auto* build = app.add_subcommand("build-corpus", "Translate, filter and label a corpus");
  build->add_option("--in", bc.in)->required();
  build->add_option("--spec", bc.spec)->required();
  build->add_option("--out", bc.out);
  build->add_option("--name", bc.name, "Output file stem");
  build->add_option("--seed", bc.seed);
  build->add_option("--noise", bc.noise)->check(CLI::Range(0.0, 1.0));
  build->add_option("--tau", bc.tau)->check(CLI::Range(0.0, 1.0));
  build->add_option("--mode", bc.mode, "sentence, keyword or none");
  build->add_option("--teacher", bc.teacher, "Existing teacher checkpoint");
  build->add_option("--teacher-epochs", bc.teacher_epochs);
  build->add_option("--extract-top-k", bc.extract_top_k, "Keep only the k most salient sentences");

  TrainXsimArgs tx;
  tx.out = out_default;
  auto* txsim = app.add_subcommand("train-xsim", "Train the cross-lingual similarity model");
  txsim->add_option("--parallel", tx.parallel)->required();
  txsim->add_option("--out", tx.out);
  txsim->add_option("--seed", tx.cfg.seed);
  txsim->add_option("--dim", tx.cfg.dim);
  txsim->add_option("--epochs", tx.cfg.epochs);
  txsim->add_option("--batch", tx.cfg.batch_size);
  txsim->add_option("--margin", tx.cfg.margin);
  txsim->add_option("--lr", tx.cfg.lr);

  PretrainArgs pt;
  pt.out = out_default;
  auto* pre = app.add_subcommand("pretrain", "Supervised multi-task pre-training");
  pre->add_option("--corpus", pt.corpus)->required();
  pre->add_option("--parallel", pt.parallel);
  pre->add_option("--recipe", pt.recipe);
  pre->add_option("--config", pt.config, "JSON training config");
  pre->add_option("--seed", pt.seed);
  pre->add_option("--epochs", pt.epochs);
  pre->add_option("--out", pt.out);

  RlArgs rl;
  rl.out = out_default;
  auto* rlcmd = app.add_subcommand("rl-finetune", "Self-critical fine-tuning");
  rlcmd->add_option("--checkpoint", rl.checkpoint)->required();
  rlcmd->add_option("--corpus", rl.corpus)->required();
  rlcmd->add_option("--validation", rl.validation);
  rlcmd->add_option("--recipe", rl.recipe);
  rlcmd->add_option("--xsim", rl.xsim);
  rlcmd->add_option("--config", rl.config, "JSON fine-tuning config");
  rlcmd->add_option("--seed", rl.seed);
  rlcmd->add_option("--epochs", rl.epochs);
  rlcmd->add_option("--out", rl.out);

  EvaluateArgs ev;
  ev.out = out_default;
  auto* eval = app.add_subcommand("evaluate", "Score summaries against references");
  eval->add_option("--checkpoint", ev.checkpoint);
  eval->add_option("--predictions", ev.predictions, "One candidate per line instead of a model");
  eval->add_option("--test", ev.test)->required();
  eval->add_option("--xsim", ev.xsim);
  eval->add_option("--segmentation", ev.segmentation, "word or character");
  eval->add_option("--max-len", ev.max_len);
  eval->add_option("--out", ev.out);

  GenerateArgs gen;
  auto* gencmd = app.add_subcommand("generate", "Summarize one article per input line");
  gencmd->add_option("--checkpoint", gen.checkpoint)->required();
  gencmd->add_option("--input", gen.input)->required();
  gencmd->add_option("--output", gen.output)->required();
  gencmd->add_option("--max-len", gen.max_len);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error[usage]: " << e.what() << "\n";
    return 2;
  }

  try {
    if (*datagen) cmd_datagen(dg, out);
    else if (*build) cmd_build_corpus(bc, out);
    else if (*txsim) cmd_train_xsim(tx, out);
    else if (*pre) cmd_pretrain(pt, out);
    else if (*rlcmd) cmd_rl_finetune(rl, out);
    else if (*eval) cmd_evaluate(ev, out);
    else if (*gencmd) cmd_generate(gen, out);
  } catch (const Error& e) {
    err << "error[" << e.tag() << "]: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error[internal]: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace xlsum::cli
