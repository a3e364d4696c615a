#pragma once

// Command-line driver: gen-data, train, finetune, decode, mask-stats, bench
// and report. Exit codes: 0 success, 1 usage error, 2 runtime error.

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <regex>
#include <sstream>
#include <string>
#include <vector>

#include "cts/bench.hpp"
#include "cts/checkpoint.hpp"
#include "cts/config.hpp"
#include "cts/data.hpp"
#include "cts/evaluate.hpp"
#include "cts/metrics.hpp"
#include "cts/training.hpp"

namespace cts::cli {

namespace fs = std::filesystem;

inline constexpr const char* kTrainFile = "train.ctsd";
inline constexpr const char* kTestFile = "test.ctsd";
inline constexpr const char* kBaselineFile = "baseline.ckpt";

struct Flags {
  std::string config;
  std::optional<std::string> out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> beam;
  std::optional<bool> mask;
  std::optional<std::string> mode;
  std::optional<std::string> keep_blanks;
  std::optional<std::size_t> repeats;
  std::vector<std::string> overrides;
  std::string data_dir;
  std::string checkpoint;
  std::string masks;
};

/// Usage problems detected after parsing (bad config keys or values).
struct UsageError : Error {
  using Error::Error;
};

inline RunConfig resolve_config(const Flags& f) {
  RunConfig cfg;
  try {
    if (!f.config.empty()) apply_config_file(cfg, f.config);
    for (const std::string& kv : f.overrides) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
      set_config_value(cfg, detail::trim(kv.substr(0, eq)), kv.substr(eq + 1));
    }
    if (f.out_dir) set_config_value(cfg, "out_dir", *f.out_dir);
    if (f.seed) set_config_value(cfg, "seed", std::to_string(*f.seed));
    if (f.beam) set_config_value(cfg, "decode.beam", std::to_string(*f.beam));
    if (f.mask) set_config_value(cfg, "decode.mask", *f.mask ? "true" : "false");
    if (f.mode) set_config_value(cfg, "finetune.mode", *f.mode);
    if (f.keep_blanks) set_config_value(cfg, "cts.keep_blanks", *f.keep_blanks);
    if (f.repeats) set_config_value(cfg, "bench.repeats", std::to_string(*f.repeats));
    cfg.validate();
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }
  return cfg;
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path);
  if (!os) throw Error("cannot write " + path.string());
  os << text;
}

/// Creates the output directory and records the resolved configuration.
inline fs::path prepare_out_dir(const RunConfig& cfg, const std::string& command) {
  const fs::path dir(cfg.out_dir);
  fs::create_directories(dir);
  write_text(dir / ("config_" + command + ".ini"), config_text(cfg));
  return dir;
}

inline fs::path data_dir(const Flags& f, const RunConfig& cfg) {
  return f.data_dir.empty() ? fs::path(cfg.out_dir) : fs::path(f.data_dir);
}

inline fs::path checkpoint_path(const Flags& f, const RunConfig& cfg) {
  return f.checkpoint.empty() ? fs::path(cfg.out_dir) / kBaselineFile : fs::path(f.checkpoint);
}

inline std::string detokenize(const std::vector<int>& ids) {
  std::string s;
  for (std::size_t i = 0; i < ids.size(); ++i) s += (i ? " w" : "w") + std::to_string(ids[i]);
  return s;
}

inline std::string join_ids(const std::vector<int>& ids) {
  std::string s;
  for (std::size_t i = 0; i < ids.size(); ++i) s += (i ? " " : "") + std::to_string(ids[i]);
  return s;
}

inline std::vector<int> split_ids(const std::string& s, const std::string& where) {
  std::vector<int> out;
  std::istringstream is(s);
  std::string tok;
  while (is >> tok) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoi(tok, &used));
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      throw FormatError(where + ": bad token id '" + tok + "'");
    }
  }
  return out;
}

inline int cmd_gen_data(const Flags& f, std::ostream& out) {
  const RunConfig cfg = resolve_config(f);
  const fs::path dir = prepare_out_dir(cfg, "gen-data");
  const Dataset train = gen_synthetic_dataset(cfg.data, cfg.train_utts, 0);
  const Dataset test = gen_synthetic_dataset(cfg.data, cfg.test_utts, cfg.train_utts);
  save_dataset(dir / kTrainFile, train);
  save_dataset(dir / kTestFile, test);
  out << "wrote " << train.size() << " train and " << test.size() << " test utterances to " << dir.string() << "\n";
  return 0;
}

inline int cmd_train(const Flags& f, std::ostream& out) {
  const RunConfig cfg = resolve_config(f);
  const Dataset train = load_dataset(data_dir(f, cfg) / kTrainFile);
  const fs::path dir = prepare_out_dir(cfg, "train");
  Model model(cfg.model, cfg.seed);
  const TrainResult r = train_baseline(model, train, cfg.train);
  save_checkpoint(dir / kBaselineFile, model);
  std::ofstream csv(dir / "train_loss.csv");
  write_loss_csv(csv, r);
  if (!r.curve.empty()) out << "final loss " << r.curve.back().loss << "\n";
  const fs::path test_path = data_dir(f, cfg) / kTestFile;
  if (fs::exists(test_path)) out << "ctc token accuracy " << ctc_token_accuracy(model, load_dataset(test_path)) << "\n";
  out << "wrote " << (dir / kBaselineFile).string() << "\n";
  return 0;
}

inline int cmd_finetune(const Flags& f, std::ostream& out) {
  const RunConfig cfg = resolve_config(f);
  Model model = load_checkpoint(checkpoint_path(f, cfg));
  const Dataset train = load_dataset(data_dir(f, cfg) / kTrainFile);
  const fs::path dir = prepare_out_dir(cfg, "finetune");
  const TrainResult r = finetune(model, train, cfg.finetune);
  const std::string stem = "finetune_" + to_string(cfg.finetune.mode);
  save_checkpoint(dir / (stem + ".ckpt"), model);
  std::ofstream csv(dir / (stem + "_loss.csv"));
  write_loss_csv(csv, r);
  out << "wrote " << (dir / (stem + ".ckpt")).string() << "\n";
  return 0;
}

inline std::string decode_stem(const fs::path& ckpt, std::size_t beam, bool mask) {
  return "decode_" + ckpt.stem().string() + "_b" + std::to_string(beam) + "_" + (mask ? "mask" : "nomask");
}

inline int cmd_decode(const Flags& f, std::ostream& out) {
  const RunConfig cfg = resolve_config(f);
  const fs::path ckpt = checkpoint_path(f, cfg);
  const Model model = load_checkpoint(ckpt);
  const Dataset test = load_dataset(data_dir(f, cfg) / kTestFile);
  const fs::path dir = prepare_out_dir(cfg, "decode");
  const std::string stem = decode_stem(ckpt, cfg.beam, cfg.mask);
  std::ofstream hyp(dir / (stem + ".hyp")), ref(dir / (stem + ".ref"));
  std::ofstream masks;
  if (cfg.mask) masks.open(dir / (stem + ".mask"));
  if (!hyp || !ref || (cfg.mask && !masks)) throw Error("cannot write decode outputs in " + dir.string());
  hyp << std::setprecision(10);
  ErrorBreakdown total;
  const DecodeSettings s{cfg.beam, cfg.mask, cfg.keep_blanks, cfg.max_len};
  for (const Utterance& u : test) {
    const DecodedUtterance d = decode_utterance(model, u, s);
    const std::vector<int> labels = d.hyp.labels(model.config());
    hyp << u.id << '\t' << join_ids(labels) << '\t' << detokenize(labels) << '\t' << d.hyp.score << '\n';
    ref << u.id << '\t' << join_ids(u.transcript) << '\n';
    if (cfg.mask) write_mask_line(masks, u.id, d.mask.keep);
    total += wer_score(u.transcript, labels);
  }
  out << stem << ": WER " << total.wer() << " (sub " << total.sub() << " del " << total.del() << " ins "
      << total.ins() << ")\n";
  return 0;
}

struct MaskSummary {
  std::size_t utts = 0, frames = 0, kept = 0;
  double mean_ratio = 0.0;
};

inline int cmd_mask_stats(const Flags& f, std::ostream& out) {
  const RunConfig cfg = resolve_config(f);
  std::vector<MaskRecord> records;
  if (!f.masks.empty()) {
    std::ifstream is(f.masks);
    if (!is) throw Error("mask file not found: " + f.masks);
    records = read_mask_file(is);
  } else {
    const Model model = load_checkpoint(checkpoint_path(f, cfg));
    for (const Utterance& u : load_dataset(data_dir(f, cfg) / kTestFile)) {
      const EncoderOutput enc = encoder_forward(model, u.features);
      records.push_back({u.id, build_cts_mask(enc.posterior, cfg.keep_blanks).keep});
    }
  }
  if (records.empty()) throw EmptyInputError("mask-stats: no masks");
  const fs::path dir = prepare_out_dir(cfg, "mask-stats");
  std::ostringstream csv;
  csv << "id,frames,kept,compression_ratio\n" << std::setprecision(10);
  MaskSummary sum;
  for (const MaskRecord& r : records) {
    if (r.keep.empty()) throw EmptyInputError("mask-stats: empty mask for " + r.id);
    const auto kept = static_cast<std::size_t>(std::count(r.keep.begin(), r.keep.end(), true));
    const double ratio = static_cast<double>(kept) / static_cast<double>(r.keep.size());
    csv << r.id << ',' << r.keep.size() << ',' << kept << ',' << ratio << '\n';
    ++sum.utts;
    sum.frames += r.keep.size();
    sum.kept += kept;
    sum.mean_ratio += ratio;
  }
  sum.mean_ratio /= static_cast<double>(sum.utts);
  write_text(dir / "mask_stats.csv", csv.str());
  out << std::setprecision(10) << "utts " << sum.utts << " frames " << sum.frames << " kept " << sum.kept
      << " ratio " << static_cast<double>(sum.kept) / static_cast<double>(sum.frames) << " mean_ratio "
      << sum.mean_ratio << "\n";
  return 0;
}

inline int cmd_bench(const Flags& f, std::ostream& out) {
  const RunConfig cfg = resolve_config(f);
  const Model model = load_checkpoint(checkpoint_path(f, cfg));
  Dataset test = load_dataset(data_dir(f, cfg) / kTestFile);
  if (test.size() > cfg.bench_utts) test.resize(cfg.bench_utts);
  const fs::path dir = prepare_out_dir(cfg, "bench");
  std::vector<bool> modes{false, true};
  if (f.mask) modes = {*f.mask};
  std::vector<BenchRow> rows;
  for (bool m : modes) {
    auto r = bench_decode(model, test, cfg.bench_beams, m, cfg.repeats, cfg.keep_blanks);
    rows.insert(rows.end(), r.begin(), r.end());
  }
  std::ostringstream csv;
  write_bench_csv(csv, rows);
  write_text(dir / "bench.csv", csv.str());
  out << csv.str();
  return 0;
}

struct ReportRow {
  std::string model;
  std::size_t beam = 0;
  bool mask = false;
  std::size_t utts = 0;
  ErrorBreakdown err;
};

inline std::map<std::string, std::vector<int>> read_id_table(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw Error("missing decode file: " + path.string());
  std::map<std::string, std::vector<int>> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw FormatError(path.string() + ": expected tab-separated fields");
    const std::string id = line.substr(0, tab);
    const auto next = line.find('\t', tab + 1);
    const std::string ids = line.substr(tab + 1, next == std::string::npos ? std::string::npos : next - tab - 1);
    if (!out.emplace(id, split_ids(ids, path.string())).second) throw FormatError(path.string() + ": duplicate id " + id);
  }
  return out;
}

/// Recomputes WER for every decode output under `dir`.
inline std::vector<ReportRow> collect_report(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw Error("run directory not found: " + dir.string());
  static const std::regex name(R"(decode_(.+)_b(\d+)_(mask|nomask)\.hyp)");
  std::vector<fs::path> hyps;
  for (const auto& entry : fs::directory_iterator(dir))
    if (std::regex_match(entry.path().filename().string(), name)) hyps.push_back(entry.path());
  std::sort(hyps.begin(), hyps.end());
  if (hyps.empty()) throw EmptyInputError("report: no decode outputs in " + dir.string());
  std::vector<ReportRow> rows;
  for (const fs::path& h : hyps) {
    std::smatch m;
    const std::string fname = h.filename().string();
    std::regex_match(fname, m, name);
    ReportRow row;
    row.model = m[1];
    row.beam = std::stoul(m[2]);
    row.mask = m[3] == "mask";
    const auto hyp = read_id_table(h);
    const auto ref = read_id_table(fs::path(h).replace_extension(".ref"));
    if (hyp.empty()) throw EmptyInputError("report: empty hypothesis set in " + h.string());
    for (const auto& [id, tokens] : hyp) {
      auto it = ref.find(id);
      if (it == ref.end()) throw FormatError("report: no reference for " + id);
      row.err += wer_score(it->second, tokens);
      ++row.utts;
    }
    if (row.utts != ref.size()) throw FormatError("report: " + fname + " does not cover every reference");
    rows.push_back(row);
  }
  return rows;
}

inline std::string report_csv(const std::vector<ReportRow>& rows) {
  std::ostringstream os;
  os << "model,beam,mask,utts,ref_words,substitutions,deletions,insertions,errors,wer,sub,del,ins\n";
  for (const ReportRow& r : rows) {
    os << r.model << ',' << r.beam << ',' << (r.mask ? 1 : 0) << ',' << r.utts << ',' << r.err.ref_words << ','
       << r.err.substitutions << ',' << r.err.deletions << ',' << r.err.insertions << ',' << r.err.errors() << ','
       << r.err.wer() << ',' << r.err.sub() << ',' << r.err.del() << ',' << r.err.ins() << '\n';
  }
  return os.str();
}

inline std::string report_text(const std::vector<ReportRow>& rows, const fs::path& dir) {
  std::ostringstream os;
  os << std::left << std::setw(24) << "model" << std::setw(6) << "beam" << std::setw(6) << "mask" << std::right
     << std::setw(8) << "WER" << std::setw(8) << "sub" << std::setw(8) << "del" << std::setw(8) << "ins" << '\n';
  os << std::fixed << std::setprecision(2);
  for (const ReportRow& r : rows) {
    os << std::left << std::setw(24) << r.model << std::setw(6) << r.beam << std::setw(6) << (r.mask ? "yes" : "no")
       << std::right << std::setw(8) << r.err.wer() << std::setw(8) << r.err.sub() << std::setw(8) << r.err.del()
       << std::setw(8) << r.err.ins() << '\n';
  }
  std::ifstream bench(dir / "bench.csv");
  if (bench) {
    os << "\ntiming (bench.csv)\n";
    std::string line;
    while (std::getline(bench, line)) os << line << '\n';
  }
  return os.str();
}

inline int cmd_report(const Flags& f, std::ostream& out) {
  const RunConfig cfg = resolve_config(f);
  const fs::path dir(cfg.out_dir);
  const std::vector<ReportRow> rows = collect_report(dir);
  const std::string text = report_text(rows, dir);
  write_text(dir / "report.csv", report_csv(rows));
  write_text(dir / "report.txt", text);
  out << text;
  return 0;
}

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Connectionist temporal summarization toolkit", "cts"};
  app.require_subcommand(1);
  Flags f;
  std::string chosen;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", f.config, "key = value configuration file");
    sub->add_option("--out-dir", f.out_dir, "output directory");
    sub->add_option("--seed", f.seed, "run seed");
    sub->add_option("--set", f.overrides, "override one config key (key=value)");
  };
  auto add_model_io = [&](CLI::App* sub) {
    sub->add_option("--data", f.data_dir, "directory holding train.ctsd/test.ctsd (default: out-dir)");
    sub->add_option("--checkpoint", f.checkpoint, "model checkpoint (default: out-dir/baseline.ckpt)");
  };
  auto add_mask_flags = [&](CLI::App* sub) {
    sub->add_flag_function(
        "--mask,!--no-mask", [&](std::int64_t n) { f.mask = n > 0; }, "attach the CTS mask");
    sub->add_option("--keep-blanks", f.keep_blanks, "keep blank-segment representatives")
        ->check(CLI::IsMember({"true", "false"}));
  };

  CLI::App* gen = app.add_subcommand("gen-data", "generate the synthetic train/test sets");
  add_common(gen);
  CLI::App* train = app.add_subcommand("train", "phase-1 hybrid CTC/attention training");
  add_common(train);
  add_model_io(train);
  CLI::App* ft = app.add_subcommand("finetune", "fine-tune a baseline with the CTS mask attached");
  add_common(ft);
  add_model_io(ft);
  ft->add_option("--mode", f.mode, "full | frozen_enc | two_step")
      ->check(CLI::IsMember({"full", "frozen_enc", "two_step"}));
  ft->add_option("--keep-blanks", f.keep_blanks, "keep blank-segment representatives")
      ->check(CLI::IsMember({"true", "false"}));
  CLI::App* dec = app.add_subcommand("decode", "beam-search decode the test set");
  add_common(dec);
  add_model_io(dec);
  dec->add_option("--beam", f.beam, "beamwidth");
  add_mask_flags(dec);
  CLI::App* ms = app.add_subcommand("mask-stats", "summarize CTS masks (from --masks or computed)");
  add_common(ms);
  add_model_io(ms);
  ms->add_option("--masks", f.masks, "mask file written by decode");
  ms->add_option("--keep-blanks", f.keep_blanks, "keep blank-segment representatives")
      ->check(CLI::IsMember({"true", "false"}));
  CLI::App* bench = app.add_subcommand("bench", "time decoding with and without the mask");
  add_common(bench);
  add_model_io(bench);
  add_mask_flags(bench);
  bench->add_option("--repeats", f.repeats, "timed repeats per configuration (>= 3)");
  CLI::App* report = app.add_subcommand("report", "WER and timing tables for a run directory");
  add_common(report);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (app.exit(e, out, err) == 0) return 0;
    err << '\n' << app.help();
    return 1;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(f, out);
    if (train->parsed()) return cmd_train(f, out);
    if (ft->parsed()) return cmd_finetune(f, out);
    if (dec->parsed()) return cmd_decode(f, out);
    if (ms->parsed()) return cmd_mask_stats(f, out);
    if (bench->parsed()) return cmd_bench(f, out);
    if (report->parsed()) return cmd_report(f, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  err << app.help();
  return 1;
}

}  // namespace cts::cli
