#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "specens/engine.hpp"
#include "specens/errors.hpp"
#include "specens/ngram.hpp"
#include "specens/tokenizer.hpp"
#include "specens/trace_io.hpp"

namespace {

namespace fs = std::filesystem;
using specens::InvalidConfig;

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw InvalidConfig("cannot open file: " + path);
  }
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw InvalidConfig("cannot open file: " + path);
  }
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') {
      line.pop_back();
    }
    lines.push_back(line);
  }
  return lines;
}

struct ModelFiles {
  std::string tokenizer_file;
  std::string model_file;
};

// Everything cmd_decode needs; flags fill it first, then an optional JSON
// config file overrides whichever fields it names.
struct DecodeOptions {
  std::vector<ModelFiles> models;
  std::size_t drafter_index = 0;
  std::vector<std::string> modes = {"safe"};
  std::size_t chunk_len = 5;
  std::size_t top_k = 8;
  std::size_t max_new_tokens = 2048;
  double threshold = 0.5;
  specens::SharpeningConfig sharpening;
  bool sharpen_baselines = false;
  std::string prompts_file;
  std::string output_dir = ".";
  unsigned seed = 0;  // reserved for optional randomized tie-breaking
  bool timings = false;
};

void apply_config_file(DecodeOptions& opt, const std::string& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(slurp(path));
  } catch (const nlohmann::json::exception& e) {
    throw InvalidConfig(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) {
    throw InvalidConfig("config root must be a JSON object");
  }
  if (j.contains("models")) {
    opt.models.clear();
    for (const auto& m : j["models"]) {
      if (!m.is_object() || !m.contains("tokenizer_file") ||
          !m.contains("model_file")) {
        throw InvalidConfig(
            "each models entry needs tokenizer_file and model_file");
      }
      opt.models.push_back({m["tokenizer_file"].get<std::string>(),
                            m["model_file"].get<std::string>()});
    }
  }
  if (j.contains("drafter_index")) {
    opt.drafter_index = j["drafter_index"].get<std::size_t>();
  }
  if (j.contains("mode")) {
    opt.modes.clear();
    if (j["mode"].is_array()) {
      for (const auto& m : j["mode"]) {
        opt.modes.push_back(m.get<std::string>());
      }
    } else {
      opt.modes.push_back(j["mode"].get<std::string>());
    }
  }
  if (j.contains("chunk_len")) {
    opt.chunk_len = j["chunk_len"].get<std::size_t>();
  }
  if (j.contains("top_k")) {
    opt.top_k = j["top_k"].get<std::size_t>();
  }
  if (j.contains("max_new_tokens")) {
    opt.max_new_tokens = j["max_new_tokens"].get<std::size_t>();
  }
  if (j.contains("threshold")) {
    opt.threshold = j["threshold"].get<double>();
  }
  if (j.contains("sharpening")) {
    const auto& s = j["sharpening"];
    if (s.contains("enabled")) {
      opt.sharpening.enabled = s["enabled"].get<bool>();
    }
    if (s.contains("smoothness_threshold")) {
      opt.sharpening.smoothness_threshold =
          s["smoothness_threshold"].get<double>();
    }
    if (s.contains("prefix_min_prob")) {
      opt.sharpening.prefix_min_prob = s["prefix_min_prob"].get<double>();
    }
  }
  if (j.contains("sharpen_baselines")) {
    opt.sharpen_baselines = j["sharpen_baselines"].get<bool>();
  }
  if (j.contains("prompts_file")) {
    opt.prompts_file = j["prompts_file"].get<std::string>();
  }
  if (j.contains("output_dir")) {
    opt.output_dir = j["output_dir"].get<std::string>();
  }
  if (j.contains("seed")) {
    opt.seed = j["seed"].get<unsigned>();
  }
  if (j.contains("timings")) {
    opt.timings = j["timings"].get<bool>();
  }
}

int cmd_train_tokenizer(const std::string& corpus_path, std::size_t vocab_size,
                        const std::string& out_path) {
  const auto tok =
      specens::SubwordTokenizer::train(slurp(corpus_path), vocab_size);
  tok.save_file(out_path);
  std::cout << "wrote " << out_path << " (vocab " << tok.vocab_size()
            << ", merges " << tok.merge_count() << ")\n";
  return 0;
}

int cmd_train_model(const std::string& corpus_path,
                    const std::string& tokenizer_path, std::size_t order,
                    double alpha, const std::string& out_path) {
  auto tok = std::make_shared<const specens::SubwordTokenizer>(
      specens::SubwordTokenizer::load_file(tokenizer_path));
  auto model =
      specens::NgramModel::train(tok, slurp(corpus_path), order, alpha);
  model.set_tokenizer_file(tokenizer_path);
  model.save_file(out_path);
  std::cout << "wrote " << out_path << " (order " << order << ", alpha "
            << alpha << ")\n";
  return 0;
}

int cmd_decode(const DecodeOptions& opt) {
  if (opt.prompts_file.empty()) {
    throw InvalidConfig("a prompts file is required");
  }
  if (opt.models.empty()) {
    throw InvalidConfig("at least one model entry is required");
  }
  if (opt.modes.empty()) {
    throw InvalidConfig("at least one decode mode is required");
  }

  specens::EnsembleSetup setup;
  for (const auto& files : opt.models) {
    auto tok = std::make_shared<const specens::SubwordTokenizer>(
        specens::SubwordTokenizer::load_file(files.tokenizer_file));
    auto model = std::make_shared<const specens::NgramModel>(
        specens::NgramModel::load_file(files.model_file, tok));
    setup.models.push_back({std::move(tok), std::move(model)});
  }
  setup.drafter_index = opt.drafter_index;
  setup.chunk_len = opt.chunk_len;
  setup.top_k = opt.top_k;
  setup.max_new_tokens = opt.max_new_tokens;
  setup.threshold = opt.threshold;
  setup.sharpening = opt.sharpening;
  setup.sharpen_baselines = opt.sharpen_baselines;

  std::vector<specens::Mode> modes;
  for (const auto& name : opt.modes) {
    modes.push_back(specens::mode_from_name(name));
  }
  const auto prompts = read_lines(opt.prompts_file);

  fs::create_directories(opt.output_dir);
  std::vector<specens::DecodeTrace> traces;
  std::vector<specens::SummaryRow> rows;
  traces.reserve(prompts.size() * modes.size());
  for (std::size_t p = 0; p < prompts.size(); ++p) {
    for (const auto mode : modes) {
      traces.push_back(specens::decode(setup, mode, prompts[p]));
      const auto& trace = traces.back();
      const fs::path path =
          fs::path(opt.output_dir) /
          ("trace_" + std::to_string(p) + "_" + specens::mode_name(mode) +
           ".jsonl");
      specens::write_text_file(path.string(),
                               specens::trace_to_jsonl(trace, opt.timings));
      rows.push_back({p, &trace});
    }
  }
  const fs::path summary_path = fs::path(opt.output_dir) / "summary.csv";
  specens::write_text_file(summary_path.string(),
                           specens::summary_to_csv(rows, opt.timings));
  std::cout << "wrote " << rows.size() << " traces and " << summary_path
            << "\n";
  return 0;
}

int cmd_agreement(const std::vector<std::string>& tokenizer_paths,
                  const std::string& wordlist_path,
                  const std::string& output_dir) {
  if (tokenizer_paths.size() < 2) {
    throw InvalidConfig("agreement needs at least two tokenizers");
  }
  std::vector<specens::SubwordTokenizer> owned;
  owned.reserve(tokenizer_paths.size());
  std::vector<const specens::SubwordTokenizer*> toks;
  std::vector<std::string> labels;
  for (const auto& path : tokenizer_paths) {
    owned.push_back(specens::SubwordTokenizer::load_file(path));
    labels.push_back(fs::path(path).stem().string());
  }
  for (const auto& tok : owned) {
    toks.push_back(&tok);
  }
  std::vector<std::string> words;
  for (auto& line : read_lines(wordlist_path)) {
    if (!line.empty()) {
      words.push_back(std::move(line));
    }
  }
  fs::create_directories(output_dir);
  const fs::path path = fs::path(output_dir) / "agreement.csv";
  specens::write_text_file(path.string(),
                           specens::agreement_to_csv(labels, toks, words));
  std::cout << "wrote " << path << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "Heterogeneous-tokenizer ensemble decoding: train toy tokenizers and "
      "n-gram models, run decode experiments, compare tokenizations"};
  app.require_subcommand(1);

  auto* train_tok = app.add_subcommand(
      "train-tokenizer", "Train a byte-level pair-merge tokenizer");
  std::string tt_corpus, tt_out;
  std::size_t tt_vocab = 512;
  train_tok->add_option("--corpus", tt_corpus, "UTF-8 corpus file")
      ->required();
  train_tok->add_option("--vocab-size", tt_vocab, "Target vocabulary size");
  train_tok->add_option("--out", tt_out, "Output artifact path")->required();

  auto* train_model =
      app.add_subcommand("train-model", "Train a smoothed n-gram model");
  std::string tm_corpus, tm_tokenizer, tm_out;
  std::size_t tm_order = 3;
  double tm_alpha = 0.1;
  train_model->add_option("--corpus", tm_corpus, "UTF-8 corpus file")
      ->required();
  train_model
      ->add_option("--tokenizer", tm_tokenizer, "Tokenizer artifact path")
      ->required();
  train_model->add_option("--order", tm_order, "N-gram order (>= 1)");
  train_model->add_option("--alpha", tm_alpha, "Additive smoothing constant");
  train_model->add_option("--out", tm_out, "Output artifact path")
      ->required();

  auto* decode = app.add_subcommand(
      "decode", "Run decode experiments and export traces and metrics");
  DecodeOptions opt;
  std::string config_path;
  std::vector<std::string> model_pairs;
  decode->add_option("--config", config_path,
                     "JSON config; its fields override the flags below");
  decode->add_option("--model", model_pairs,
                     "Model as <tokenizer.json>:<model.json>, repeatable");
  decode->add_option("--drafter-index", opt.drafter_index,
                     "Index of the drafting model");
  decode->add_option("--mode", opt.modes,
                     "single, every_token, threshold or safe (repeatable)");
  decode->add_option("--chunk-len", opt.chunk_len, "Draft chunk length");
  decode->add_option("--top-k", opt.top_k, "Distribution truncation");
  decode->add_option("--max-new-tokens", opt.max_new_tokens,
                     "Generation cap per prompt");
  decode->add_option("--threshold", opt.threshold,
                     "Threshold-mode ensembling trigger");
  decode->add_flag("--no-sharpening",
                   [&](std::size_t) { opt.sharpening.enabled = false; },
                   "Disable probability sharpening");
  decode->add_option("--smoothness-threshold",
                     opt.sharpening.smoothness_threshold,
                     "Sharpening trigger: fire when max ensemble prob below");
  decode->add_option("--prefix-min-prob", opt.sharpening.prefix_min_prob,
                     "Minimum averaged probability for sharpening candidates");
  decode->add_flag("--sharpen-baselines", opt.sharpen_baselines,
                   "Apply sharpening in every-token and threshold modes too");
  decode->add_option("--prompts", opt.prompts_file,
                     "Prompts file, one prompt per line");
  decode->add_option("--output-dir", opt.output_dir, "Output directory");
  decode->add_option("--seed", opt.seed,
                     "Reserved: tie-breaking randomization seed");
  decode->add_flag("--timings", opt.timings,
                   "Record wall-clock times in outputs (breaks byte-for-byte "
                   "reproducibility)");

  auto* agreement = app.add_subcommand(
      "agreement", "Pairwise tokenization agreement over a word list");
  std::vector<std::string> ag_tokenizers;
  std::string ag_words, ag_outdir = ".";
  agreement
      ->add_option("--tokenizers", ag_tokenizers,
                   "Two or more tokenizer artifacts")
      ->required()
      ->expected(-2);
  agreement->add_option("--wordlist", ag_words, "Word list, one per line")
      ->required();
  agreement->add_option("--output-dir", ag_outdir, "Output directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train_tok->parsed()) {
      return cmd_train_tokenizer(tt_corpus, tt_vocab, tt_out);
    }
    if (train_model->parsed()) {
      return cmd_train_model(tm_corpus, tm_tokenizer, tm_order, tm_alpha,
                             tm_out);
    }
    if (decode->parsed()) {
      for (const auto& pair : model_pairs) {
        const auto colon = pair.find(':');
        if (colon == std::string::npos) {
          throw InvalidConfig(
              "--model expects <tokenizer.json>:<model.json>");
        }
        opt.models.push_back(
            {pair.substr(0, colon), pair.substr(colon + 1)});
      }
      if (!config_path.empty()) {
        apply_config_file(opt, config_path);
      }
      return cmd_decode(opt);
    }
    if (agreement->parsed()) {
      return cmd_agreement(ag_tokenizers, ag_words, ag_outdir);
    }
  } catch (const specens::InternalInvariantViolation& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 3;
  } catch (const specens::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
