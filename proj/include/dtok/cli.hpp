// Copyright 2026 The dtok Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Command-line front end: manifest-driven train-quantizer / encode / decode /
// augment / stats / inspect.
//
// Exit codes: 0 success, 2 usage or configuration error, 3 data or format error.

#pragma once

#include <algorithm>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "dtok/dtok.hpp"

namespace dtok::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;

namespace fs = std::filesystem;
using nlohmann::json;

inline int exit_code_for(ErrorKind kind) { return kind == ErrorKind::kConfig ? kExitConfig : kExitData; }

namespace detail {

inline void check_utt_id(const std::string& id) {
  if (id.empty() || id.find('/') != std::string::npos || id.find('\\') != std::string::npos || id == "." || id == "..") {
    fail(ErrorKind::kSchema, "utt_id '" + id + "' cannot be used as a file name");
  }
}

// Runs fn(i) for every utterance on up to `workers` threads; the first failure
// (in utterance order) is rethrown after all workers finish.
template <typename Fn>
void for_each_utterance(std::size_t count, unsigned workers, Fn&& fn) {
  std::vector<std::exception_ptr> errors(count);
  for_each_chunk(count, 1, workers, [&](std::size_t, std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  });
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

inline void ensure_parent(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
}

inline void write_json(const fs::path& path, const json& j) {
  ensure_parent(path);
  io::write_text_atomic(path, j.dump(2) + "\n");
}

inline std::string dump_report(const json& j) { return j.dump(2) + "\n"; }

inline KMeansConfig::Init parse_init(const std::string& s) {
  if (s == "kmeans++") return KMeansConfig::Init::kPlusPlus;
  if (s == "random") return KMeansConfig::Init::kRandom;
  fail(ErrorKind::kConfig, "unknown init '" + s + "'");
}

inline KMeansConfig::Mode parse_mode(const std::string& s) {
  if (s == "lloyd") return KMeansConfig::Mode::kLloyd;
  if (s == "minibatch") return KMeansConfig::Mode::kMiniBatch;
  fail(ErrorKind::kConfig, "unknown mode '" + s + "'");
}

// Reads a flat key=value file. Blank lines and lines starting with '#' or ';'
// are skipped; keys may use '_' or '-'.
inline std::vector<std::pair<std::string, std::string>> read_key_values(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::kConfig, "cannot read config file " + path.string());
  auto trim = [](std::string v) {
    const auto b = v.find_first_not_of(" \t\r");
    const auto e = v.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : v.substr(b, e - b + 1);
  };
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  for (std::size_t n = 1; std::getline(in, line); ++n) {
    line = trim(line);
    if (line.empty() || line[0] == '#' || line[0] == ';') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) fail(ErrorKind::kConfig, path.string() + ":" + std::to_string(n) + ": expected key=value");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty()) fail(ErrorKind::kConfig, path.string() + ":" + std::to_string(n) + ": empty key");
    std::replace(key.begin(), key.end(), '_', '-');
    if (value.size() >= 2 && (value.front() == '"' || value.front() == '\'') && value.back() == value.front()) {
      value = value.substr(1, value.size() - 2);
    }
    out.emplace_back(std::move(key), std::move(value));
  }
  return out;
}

// Splices the contents of `<subcommand> --config FILE` in as `--key=value`
// arguments right after the subcommand, so flags given on the command line
// (parsed later, last one wins) override the file.
inline std::vector<std::string> expand_config(std::vector<std::string> args, const std::vector<std::string>& subcommands) {
  std::size_t sub = args.size();
  for (std::size_t i = 1; i < args.size(); ++i) {
    if (std::find(subcommands.begin(), subcommands.end(), args[i]) != subcommands.end()) {
      sub = i;
      break;
    }
  }
  std::vector<std::string> injected;
  for (std::size_t i = sub + 1; i < args.size(); ++i) {
    std::string file;
    if (args[i] == "--config" && i + 1 < args.size()) {
      file = args[i + 1];
    } else if (args[i].rfind("--config=", 0) == 0) {
      file = args[i].substr(9);
    } else {
      continue;
    }
    for (const auto& [k, v] : read_key_values(file)) {
      if (k == "config") fail(ErrorKind::kConfig, "config files cannot include other config files");
      injected.push_back("--" + k + "=" + v);
    }
  }
  if (!injected.empty()) args.insert(args.begin() + static_cast<std::ptrdiff_t>(sub + 1), injected.begin(), injected.end());
  return args;
}

}  // namespace detail

// ---------------------------------------------------------------------------

struct TrainArgs {
  fs::path manifest;
  fs::path out;
  std::string kind = "kmeans";
  std::size_t k = 2000;
  std::size_t groups = 2;
  std::size_t stages = 8;
  std::size_t max_iters = 100;
  double tolerance = 1e-4;
  std::string init = "kmeans++";
  std::string mode = "lloyd";
  std::size_t batch_size = 1024;
  double subset_hours = 0.0;
  double frame_prob = 1.0;
  std::uint64_t seed = 0;
  unsigned workers = 1;
};

inline int cmd_train_quantizer(const TrainArgs& a, std::ostream& out, std::ostream& log) {
  KMeansConfig cfg;
  cfg.max_iters = a.max_iters;
  cfg.tolerance = a.tolerance;
  cfg.seed = a.seed;
  cfg.init = detail::parse_init(a.init);
  cfg.mode = detail::parse_mode(a.mode);
  cfg.batch_size = a.batch_size;
  cfg.workers = a.workers;
  if (a.kind != "kmeans" && a.kind != "grouped" && a.kind != "rvq") fail(ErrorKind::kConfig, "unknown kind '" + a.kind + "'");

  Manifest manifest = read_manifest(a.manifest);
  json subset{{"target_hours", nullptr}};
  if (a.subset_hours > 0.0) {
    manifest = sample_subset(manifest, a.subset_hours, derive_seed(a.seed, "subset"));
    subset["target_hours"] = a.subset_hours;
  }
  subset["entries"] = manifest.entries.size();
  subset["hours"] = manifest.total_seconds() / 3600.0;

  const auto sampler = a.frame_prob >= 1.0 ? FrameSampler::all() : FrameSampler::bernoulli(a.frame_prob);
  auto stream = iterate_frames(manifest, sampler, derive_seed(a.seed, "frames"));
  const EmbeddingMatrix frames = collect(stream);
  log << "training " << a.kind << " on " << frames.frames << " frames of dim " << frames.dim << "\n";

  Quantizer quantizer;
  std::vector<TrainReport> reports;
  json extra = json::object();
  if (a.kind == "kmeans") {
    auto r = train_kmeans(frames, a.k, cfg);
    quantizer = std::move(r.codebook);
    reports.push_back(std::move(r.report));
  } else if (a.kind == "grouped") {
    auto r = train_grouped(view(frames), a.groups, a.k, cfg);
    quantizer = std::move(r.codebook);
    reports = std::move(r.reports);
  } else {
    auto r = train_rvq(view(frames), a.stages, a.k, cfg);
    quantizer = std::move(r.stack);
    reports = std::move(r.reports);
    extra["residual_energy"] = r.residual_energy;
  }
  for (const auto& r : reports) {
    if (r.degenerate) {
      for (const auto& w : r.warnings) log << "error: " << w << "\n";
      fail(ErrorKind::kInput, "degenerate codebook: k exceeds the number of distinct training frames");
    }
  }

  detail::ensure_parent(a.out);
  write_quantizer(quantizer, a.out);
  json report{{"kind", a.kind},
              {"seed", a.seed},
              {"k", a.k},
              {"dim", input_dim(quantizer)},
              {"codebooks", books_of(quantizer).size()},
              {"frames", frames.frames},
              {"subset", subset},
              {"init", a.init},
              {"mode", a.mode},
              {"max_iters", a.max_iters},
              {"tolerance", a.tolerance}};
  json rs = json::array();
  for (const auto& r : reports) rs.push_back(to_json(r));
  report["reports"] = rs;
  report.update(extra);
  detail::write_json(sidecar_path(a.out), report);
  out << detail::dump_report(report);
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct EncodeArgs {
  fs::path codebook;
  fs::path manifest;
  fs::path out_dir;
  std::size_t use_stages = 0;  // rvq only; 0 = all stages
  fs::path jsonl;
  unsigned workers = 1;
};

inline int cmd_encode(const EncodeArgs& a, std::ostream& out, std::ostream& log) {
  const Quantizer q = read_quantizer(a.codebook);
  const Manifest manifest = read_manifest(a.manifest);
  if (a.use_stages != 0 && kind_of(q) != QuantizerKind::kResidual) fail(ErrorKind::kConfig, "--stages applies to rvq codebooks only");
  fs::create_directories(a.out_dir);

  Manifest token_manifest;
  token_manifest.entries.resize(manifest.entries.size());
  std::vector<TokenSequence> encoded(manifest.entries.size());
  detail::for_each_utterance(manifest.entries.size(), a.workers, [&](std::size_t i) {
    const auto& e = manifest.entries[i];
    detail::check_utt_id(e.utt_id);
    const auto m = read_embedding(e.path);
    TokenSequence seq = a.use_stages != 0 ? rvq_encode(std::get<ResidualCodebookStack>(q), m, a.use_stages) : encode(q, m);
    const auto file = a.out_dir / (e.utt_id + ".dtts");
    write_tokens(seq, file);
    auto entry = e;
    entry.path = file.filename();
    entry.frames = seq.frames();
    entry.frame_rate = seq.frame_rate;
    token_manifest.entries[i] = std::move(entry);
    if (!a.jsonl.empty()) encoded[i] = std::move(seq);
  });
  write_manifest(token_manifest, a.out_dir / "manifest.jsonl");
  if (!a.jsonl.empty()) {
    std::string lines;
    for (std::size_t i = 0; i < encoded.size(); ++i) lines += tokens_to_json(manifest.entries[i].utt_id, encoded[i]).dump() + "\n";
    detail::ensure_parent(a.jsonl);
    io::write_text_atomic(a.jsonl, lines);
  }

  std::vector<std::uint32_t> vocabs;
  for (const auto* b : books_of(q)) vocabs.push_back(static_cast<std::uint32_t>(b->entries));
  if (a.use_stages != 0) vocabs.resize(a.use_stages);
  const double rate = manifest.entries.empty() ? 0.0 : manifest.entries.front().frame_rate;
  for (const auto& e : manifest.entries) {
    if (e.frame_rate != rate) log << "warning: mixed frame rates in manifest; bandwidth uses the first\n";
  }
  std::string vocab_str;
  for (std::size_t i = 0; i < vocabs.size(); ++i) vocab_str += (i ? "," : "") + std::to_string(vocabs[i]);
  out << "utterances: " << manifest.entries.size() << "\n";
  out << "vocab: " << vocab_str << "\n";
  out << "streams: " << vocabs.size() << "\n";
  out << "frame_rate: " << rate << "\n";
  out << "bandwidth: " << format_kbps(rate > 0 ? bandwidth_kbps(vocabs, rate) : 0.0) << " kbps\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct DecodeArgs {
  fs::path codebook;
  fs::path manifest;  // token manifest
  fs::path out_dir;
  fs::path reference;  // optional embedding manifest for error measurement
  unsigned workers = 1;
};

inline int cmd_decode(const DecodeArgs& a, std::ostream& out, std::ostream&) {
  const Quantizer q = read_quantizer(a.codebook);
  const Manifest manifest = read_manifest(a.manifest);
  std::map<std::string, fs::path> reference;
  if (!a.reference.empty()) {
    for (const auto& e : read_manifest(a.reference).entries) reference[e.utt_id] = e.path;
  }
  fs::create_directories(a.out_dir);
  Manifest decoded;
  decoded.entries.resize(manifest.entries.size());
  std::vector<std::optional<ReconstructionError>> errors(manifest.entries.size());
  std::vector<std::pair<double, double>> energy(manifest.entries.size());  // (signal, error) sums
  std::vector<std::size_t> values(manifest.entries.size(), 0);
  detail::for_each_utterance(manifest.entries.size(), a.workers, [&](std::size_t i) {
    const auto& e = manifest.entries[i];
    detail::check_utt_id(e.utt_id);
    const auto m = dequantize(q, read_tokens(e.path));
    const auto file = a.out_dir / (e.utt_id + ".dtek");
    write_embedding(m, file);
    auto entry = e;
    entry.path = file.filename();
    decoded.entries[i] = std::move(entry);
    if (auto it = reference.find(e.utt_id); it != reference.end()) {
      const auto orig = read_embedding(it->second);
      errors[i] = reconstruction_error(orig, m);
      double s = 0.0, d = 0.0;
      for (std::size_t j = 0; j < orig.data.size(); ++j) {
        const double x = orig.data[j];
        const double r = x - static_cast<double>(m.data[j]);
        s += x * x;
        d += r * r;
      }
      energy[i] = {s, d};
      values[i] = orig.data.size();
    }
  });
  write_manifest(decoded, a.out_dir / "manifest.jsonl");

  json report{{"utterances", decoded.entries.size()}};
  if (!reference.empty()) {
    json per = json::object();
    double s = 0.0, d = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < errors.size(); ++i) {
      if (!errors[i]) continue;
      per[manifest.entries[i].utt_id] = {{"mse", errors[i]->mse},
                                         {"snr_db", std::isinf(errors[i]->snr_db) ? json("inf") : json(errors[i]->snr_db)}};
      s += energy[i].first;
      d += energy[i].second;
      n += values[i];
    }
    report["reconstruction"] = per;
    if (n > 0) {
      report["aggregate"] = {{"mse", d / static_cast<double>(n)},
                             {"snr_db", d == 0.0 ? json("inf") : json(10.0 * std::log10(s / d))}};
    }
  }
  out << detail::dump_report(report);
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct AugmentArgs {
  fs::path manifest;  // token manifest
  fs::path out_dir;
  std::vector<fs::path> tables;
  std::size_t embed_dim = kDefaultEmbeddingDim;
  double target_rate = 0.0;
  bool write_features = true;
  unsigned workers = 1;
  AugmentationConfig config;
};

inline int cmd_augment(const AugmentArgs& a, std::ostream& out, std::ostream&) {
  validate(a.config);
  const Manifest manifest = read_manifest(a.manifest);
  fs::create_directories(a.out_dir);

  std::vector<EmbeddingTable> loaded;
  for (const auto& p : a.tables) loaded.push_back(read_table(p));

  Manifest result;
  result.entries.resize(manifest.entries.size());
  std::vector<json> reports(manifest.entries.size());
  detail::for_each_utterance(manifest.entries.size(), a.workers, [&](std::size_t i) {
    const auto& e = manifest.entries[i];
    detail::check_utt_id(e.utt_id);
    const TokenSequence tokens = read_tokens(e.path);

    std::vector<EmbeddingTable> tables = loaded;
    if (tables.empty()) {
      for (std::size_t s = 0; s < tokens.stream_count(); ++s) {
        tables.push_back(make_random_table(tokens.vocab_sizes[s], a.embed_dim, derive_seed(a.config.seed, "table" + std::to_string(s))));
      }
    }
    if (tables.size() != tokens.stream_count()) fail(ErrorKind::kConfig, "need one --table per token stream");
    std::size_t concat = 0;
    for (const auto& t : tables) concat += t.out_dim;
    const std::optional<DenseMatrix> fusion =
        tables.size() > 1 ? std::optional(random_projection(concat, tables.front().out_dim, derive_seed(a.config.seed, "fusion")))
                          : std::nullopt;
    const EmbedFn embed = [&](const TokenSequence& seq) {
      return fusion ? fuse_groups(seq, tables, *fusion) : embed_tokens(seq, tables.front());
    };

    auto sample = augment_utterance(tokens, embed, a.config, e.utt_id);
    const auto file = a.out_dir / (e.utt_id + ".dtts");
    write_tokens(sample.tokens, file);
    if (a.write_features) {
      auto feats = a.target_rate > 0.0 ? resample_nearest(sample.features, a.target_rate) : sample.features;
      write_embedding(feats, a.out_dir / (e.utt_id + ".feats.dtek"));
    }
    ManifestEntry entry = e;
    entry.path = file.filename();
    entry.frames = sample.tokens.frames();
    entry.duration_s = static_cast<double>(entry.frames) / sample.tokens.frame_rate;
    if (sample.report.applied) entry.phone_alignment.reset();  // no longer frame-aligned
    result.entries[i] = std::move(entry);
    reports[i] = to_json(sample.report);
  });
  write_manifest(result, a.out_dir / "manifest.jsonl");
  json report = json::object();
  for (std::size_t i = 0; i < reports.size(); ++i) report[manifest.entries[i].utt_id] = reports[i];
  detail::write_json(a.out_dir / "report.json", report);
  out << detail::dump_report(report);
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct StatsArgs {
  fs::path manifest;  // token manifest
  fs::path out;
  bool pnmi = false;
  bool joint = false;
};

inline json stream_stats_json(const TokenSequence& seq, std::size_t s) {
  const auto st = codebook_stats(seq, s);
  return {{"vocab", seq.vocab_sizes[s]}, {"utilization", st.utilization}, {"perplexity", st.perplexity}, {"entropy_bits", st.entropy_bits}};
}

inline json pnmi_or_null(const ContingencyTable& t) {
  try {
    return pnmi(t);
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::kUndefinedMetric) return nullptr;
    throw;
  }
}

inline int cmd_stats(const StatsArgs& a, std::ostream& out, std::ostream&) {
  const Manifest manifest = read_manifest(a.manifest);
  if (a.pnmi) {
    for (const auto& e : manifest.entries) {
      if (!e.phone_alignment) fail(ErrorKind::kConfig, "--pnmi needs phone_alignment for every entry; missing for '" + e.utt_id + "'");
    }
  }
  json per = json::object();
  std::optional<TokenSequence> corpus;
  std::vector<ContingencyTable> tables;
  ContingencyTable joint_table;
  for (const auto& e : manifest.entries) {
    const TokenSequence seq = read_tokens(e.path);
    json u{{"frames", seq.frames()}, {"bandwidth_kbps", bandwidth_kbps(seq.vocab_sizes, seq.frame_rate)}};
    json streams = json::array();
    for (std::size_t s = 0; s < seq.stream_count(); ++s) {
      json js = seq.frames() > 0 ? stream_stats_json(seq, s) : json{{"vocab", seq.vocab_sizes[s]}};
      if (a.pnmi) {
        auto t = build_contingency(seq, *e.phone_alignment, s);
        js["pnmi"] = seq.frames() > 0 ? pnmi_or_null(t) : json(nullptr);
        if (tables.size() <= s) tables.resize(s + 1);
        tables[s] = merge(tables[s], t);
      }
      streams.push_back(js);
    }
    u["streams"] = streams;
    per[e.utt_id] = u;

    if (!corpus) {
      corpus = seq;
    } else {
      if (corpus->vocab_sizes != seq.vocab_sizes || corpus->frame_rate != seq.frame_rate) {
        fail(ErrorKind::kSchema, e.utt_id + ": vocab sizes or frame rate differ from the rest of the corpus");
      }
      for (std::size_t s = 0; s < seq.stream_count(); ++s) {
        corpus->streams[s].insert(corpus->streams[s].end(), seq.streams[s].begin(), seq.streams[s].end());
      }
    }
  }
  json agg = json::object();
  if (corpus) {
    agg["frames"] = corpus->frames();
    agg["bandwidth_kbps"] = bandwidth_kbps(corpus->vocab_sizes, corpus->frame_rate);
    agg["bandwidth_kbps_display"] = format_kbps(bandwidth_kbps(corpus->vocab_sizes, corpus->frame_rate));
    json streams = json::array();
    for (std::size_t s = 0; s < corpus->stream_count(); ++s) {
      json js = corpus->frames() > 0 ? stream_stats_json(*corpus, s) : json{{"vocab", corpus->vocab_sizes[s]}};
      if (a.pnmi) js["pnmi"] = corpus->frames() > 0 ? pnmi_or_null(tables[s]) : json(nullptr);
      streams.push_back(js);
    }
    agg["streams"] = streams;
    if (a.pnmi && a.joint && corpus->frames() > 0) {
      std::vector<std::uint32_t> phones;
      for (const auto& e : manifest.entries) phones.insert(phones.end(), e.phone_alignment->begin(), e.phone_alignment->end());
      agg["joint_pnmi"] = pnmi_or_null(build_joint_contingency(*corpus, phones));
    }
  }
  json report{{"utterances", per}, {"aggregate", agg}};
  if (!a.out.empty()) detail::write_json(a.out, report);
  out << detail::dump_report(report);
  return kExitOk;
}

// ---------------------------------------------------------------------------

inline int cmd_inspect(const fs::path& file, std::ostream& out) {
  const auto bytes = io::read_file(file);
  const std::string magic(bytes.data(), std::min<std::size_t>(4, bytes.size()));
  json j{{"file", file.string()}, {"magic", magic}};
  if (magic == "DTEK") {
    const auto m = embio::decode(bytes);
    j.update({{"frames", m.frames}, {"dim", m.dim}, {"frame_rate", m.frame_rate}});
  } else if (magic == "DTTS") {
    const auto s = tokio::decode(bytes);
    j.update({{"frames", s.frames()}, {"streams", s.stream_count()}, {"vocab_sizes", s.vocab_sizes},
              {"frame_rate", s.frame_rate}, {"bandwidth_kbps", format_kbps(bandwidth_kbps(s.vocab_sizes, s.frame_rate))}});
  } else if (magic == "DTCB") {
    const auto q = cbio::decode(bytes);
    std::vector<std::size_t> ks;
    for (const auto* b : books_of(q)) ks.push_back(b->entries);
    j.update({{"kind", kind_name(kind_of(q))}, {"codebooks", ks.size()}, {"entries", ks}, {"dim", input_dim(q)}});
  } else if (magic == "DTEM") {
    const auto t = emio::decode(bytes);
    j.update({{"vocab", t.vocab}, {"out_dim", t.out_dim},
              {"init_mode", t.init_mode == EmbeddingTable::InitMode::kRandom ? "random" : "codebook_projected"},
              {"projection_rows", t.projection ? json(t.projection->rows) : json(nullptr)}});
  } else {
    fail(ErrorKind::kFormat, "unrecognized magic '" + magic + "'");
  }
  out << j.dump(2) << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& log = std::cerr) {
  CLI::App app{"dtok: discrete speech token toolkit"};
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

  std::vector<fs::path> config_files;
  auto configurable = [&](CLI::App* sub) {
    sub->add_option("--config", config_files, "key=value file of option names without dashes; flags override it")
        ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  };

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train-quantizer", "train a k-means, grouped or residual codebook");
  configurable(train_cmd);
  train_cmd->add_option("--manifest", train.manifest, "embedding manifest (JSON lines)")->required();
  train_cmd->add_option("--out", train.out, "output .dtcb file")->required();
  train_cmd->add_option("--kind", train.kind, "kmeans | grouped | rvq")->capture_default_str();
  train_cmd->add_option("--k", train.k, "entries per codebook")->capture_default_str();
  train_cmd->add_option("--groups", train.groups, "groups for --kind grouped")->capture_default_str();
  train_cmd->add_option("--stages", train.stages, "stages for --kind rvq")->capture_default_str();
  train_cmd->add_option("--max-iters", train.max_iters)->capture_default_str();
  train_cmd->add_option("--tolerance", train.tolerance)->capture_default_str();
  train_cmd->add_option("--init", train.init, "kmeans++ | random")->capture_default_str();
  train_cmd->add_option("--mode", train.mode, "lloyd | minibatch")->capture_default_str();
  train_cmd->add_option("--batch-size", train.batch_size)->capture_default_str();
  train_cmd->add_option("--subset-hours", train.subset_hours, "random utterance subset to train on (0 = all)")->capture_default_str();
  train_cmd->add_option("--frame-prob", train.frame_prob, "keep each frame with this probability")->capture_default_str();
  train_cmd->add_option("--seed", train.seed)->required();
  train_cmd->add_option("--workers", train.workers)->capture_default_str();

  EncodeArgs enc;
  auto* enc_cmd = app.add_subcommand("encode", "quantize embeddings into .dtts token files");
  configurable(enc_cmd);
  enc_cmd->add_option("--codebook", enc.codebook)->required();
  enc_cmd->add_option("--manifest", enc.manifest)->required();
  enc_cmd->add_option("--out-dir", enc.out_dir)->required();
  enc_cmd->add_option("--stages", enc.use_stages, "rvq stages to use (0 = all)")->capture_default_str();
  enc_cmd->add_option("--jsonl", enc.jsonl, "also export tokens as JSON lines");
  enc_cmd->add_option("--workers", enc.workers)->capture_default_str();

  DecodeArgs dec;
  auto* dec_cmd = app.add_subcommand("decode", "reconstruct embeddings from token files");
  configurable(dec_cmd);
  dec_cmd->add_option("--codebook", dec.codebook)->required();
  dec_cmd->add_option("--manifest", dec.manifest, "token manifest")->required();
  dec_cmd->add_option("--out-dir", dec.out_dir)->required();
  dec_cmd->add_option("--reference", dec.reference, "embedding manifest to measure reconstruction error against");
  dec_cmd->add_option("--workers", dec.workers)->capture_default_str();

  AugmentArgs aug;
  auto& ac = aug.config;
  auto* aug_cmd = app.add_subcommand("augment", "apply the discretized-input augmentation policy");
  configurable(aug_cmd);
  aug_cmd->add_option("--manifest", aug.manifest, "token manifest")->required();
  aug_cmd->add_option("--out-dir", aug.out_dir)->required();
  aug_cmd->add_option("--seed", ac.seed)->required();
  aug_cmd->add_option("--table", aug.tables, "embedding table (.dtem), one per stream")
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  aug_cmd->add_option("--embed-dim", aug.embed_dim, "dim of seeded random tables when --table is absent")->capture_default_str();
  aug_cmd->add_option("--target-rate", aug.target_rate, "resample features to this rate (0 = keep)")->capture_default_str();
  aug_cmd->add_flag("--write-features,!--no-write-features", aug.write_features)->capture_default_str();
  aug_cmd->add_option("--workers", aug.workers)->capture_default_str();
  aug_cmd->add_option("--warp-factor", ac.warp_factor)->capture_default_str();
  aug_cmd->add_option("--time-mask-count-cap", ac.time_mask_count_cap)->capture_default_str();
  aug_cmd->add_option("--time-mask-frac", ac.time_mask_frac)->capture_default_str();
  aug_cmd->add_option("--time-mask-width-cap", ac.time_mask_width_cap)->capture_default_str();
  aug_cmd->add_option("--time-mask-budget-frac", ac.time_mask_budget_frac)->capture_default_str();
  aug_cmd->add_option("--emb-mask-max-stride", ac.emb_mask_max_stride)->capture_default_str();
  aug_cmd->add_option("--emb-mask-repeats", ac.emb_mask_repeats)->capture_default_str();
  aug_cmd->add_option("--noise-prob", ac.noise_prob)->capture_default_str();
  aug_cmd->add_option("--sample-prob", ac.sample_prob)->capture_default_str();
  aug_cmd->add_option("--mask-value", ac.mask_value)->capture_default_str();
  aug_cmd->add_option("--frame-dup-prob", ac.frame_dup_prob)->capture_default_str();
  aug_cmd->add_option("--enable-time-warp", ac.enable_time_warp)->capture_default_str();
  aug_cmd->add_option("--enable-time-mask", ac.enable_time_mask)->capture_default_str();
  aug_cmd->add_option("--enable-embedding-mask", ac.enable_embedding_mask)->capture_default_str();

  StatsArgs st;
  auto* st_cmd = app.add_subcommand("stats", "token quality metrics as JSON");
  configurable(st_cmd);
  st_cmd->add_option("--manifest", st.manifest, "token manifest")->required();
  st_cmd->add_option("--out", st.out, "also write the report here");
  st_cmd->add_flag("--pnmi", st.pnmi, "compute PNMI against manifest phone alignments");
  st_cmd->add_flag("--joint", st.joint, "add joint PNMI over all streams");

  fs::path inspect_file;
  auto* insp_cmd = app.add_subcommand("inspect", "print the header of a .dtek/.dtts/.dtcb/.dtem file");
  insp_cmd->add_option("file", inspect_file)->required();

  std::vector<std::string> args(argv, argv + argc);
  try {
    std::vector<std::string> names;
    for (const auto* sub : {train_cmd, enc_cmd, dec_cmd, aug_cmd, st_cmd}) names.push_back(sub->get_name());
    args = detail::expand_config(std::move(args), names);
  } catch (const Error& e) {
    log << "dtok: " << e.what() << "\n";
    return exit_code_for(e.kind());
  }
  std::vector<const char*> expanded;
  for (const auto& a : args) expanded.push_back(a.c_str());

  try {
    app.parse(static_cast<int>(expanded.size()), expanded.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, log);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    for (auto* sub : app.get_subcommands()) {
      if (sub != insp_cmd) log << "# resolved config (" << sub->get_name() << ")\n" << sub->config_to_str(true, false);
    }
    if (*train_cmd) return cmd_train_quantizer(train, out, log);
    if (*enc_cmd) return cmd_encode(enc, out, log);
    if (*dec_cmd) return cmd_decode(dec, out, log);
    if (*aug_cmd) return cmd_augment(aug, out, log);
    if (*st_cmd) return cmd_stats(st, out, log);
    if (*insp_cmd) return cmd_inspect(inspect_file, out);
  } catch (const Error& e) {
    log << "dtok: " << e.what() << "\n";
    return exit_code_for(e.kind());
  } catch (const fs::filesystem_error& e) {
    log << "dtok: " << e.what() << "\n";
    return kExitData;
  }
  return kExitConfig;
}

}  // namespace dtok::cli
