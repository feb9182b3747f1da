#include "emostim/cli.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <iterator>
#include <sstream>

#include <CLI11.hpp>

#include "emostim/bundle.hpp"
#include "emostim/catalog.hpp"
#include "emostim/decode.hpp"
#include "emostim/error.hpp"
#include "emostim/runner.hpp"
#include "emostim/tasks.hpp"
#include "emostim/transform.hpp"

namespace emostim {

namespace {

template <class T>
std::optional<T> parse_env_number(const EnvLookup& env, const std::string& name) {
  const auto v = env(name);
  if (!v) return std::nullopt;
  T out{};
  const auto* end = v->data() + v->size();
  const auto res = std::from_chars(v->data(), end, out);
  if (res.ec != std::errc() || res.ptr != end)
    throw Error(ErrorKind::invalid_argument, name + " is not a valid number: '" + *v + "'");
  return out;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    if (b != std::string::npos) out.push_back(item.substr(b, e - b + 1));
  }
  return out;
}

std::string read_all(std::istream& in) {
  std::string s{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  while (!s.empty() && (s.back() == '\n' || s.back() == '\r')) s.pop_back();
  return s;
}

std::string csv_field(std::string_view s) {
  if (s.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

std::string md_cell(std::string_view s) {
  std::string out;
  for (char c : s) {
    if (c == '|') out += "\\|";
    else if (c == '\n') out += ' ';
    else out.push_back(c);
  }
  return out;
}

std::string require_format(const std::optional<std::string>& f, std::string fallback,
                           std::initializer_list<std::string_view> allowed) {
  std::string v = f.value_or(std::move(fallback));
  for (auto a : allowed)
    if (v == a) return v;
  throw Error(ErrorKind::invalid_argument, "unsupported --format '" + v + "' for this command");
}

Catalog active_catalog(const CliConfig& cfg) {
  if (cfg.catalog) return load_catalog_with_override(*cfg.catalog);
  return load_catalog();
}

nlohmann::ordered_json to_json(const AugmentedPrompt& p) {
  nlohmann::ordered_json j;
  j["original"] = p.original;
  j["stimulus_id"] = p.stimulus_id;
  j["mode"] = to_string(p.mode);
  j["final_text"] = p.final_text;
  if (p.image_ref) j["image_ref"] = p.image_ref->string();
  j["provenance"] = nlohmann::ordered_json::array();
  for (const auto& s : p.provenance)
    j["provenance"].push_back({{"offset", s.offset}, {"length", s.length}, {"inserted", s.inserted}});
  return j;
}

nlohmann::ordered_json report_json(const RunReport& r) {
  nlohmann::ordered_json j;
  j["scored"] = r.scored;
  j["errored"] = r.errored;
  j["error_kinds"] = r.error_kinds;
  j["rows"] = nlohmann::ordered_json::array();
  for (const auto& row : r.table.rows) {
    nlohmann::ordered_json o;
    o["suite"] = to_string(*row.key.suite);
    o["stimulus"] = *row.key.stimulus;
    o["mean"] = row.mean;
    o["std_error"] = row.std_error ? nlohmann::ordered_json(*row.std_error) : nlohmann::ordered_json();
    o["records"] = row.records;
    o["tasks"] = row.tasks;
    o["models"] = row.models;
    j["rows"].push_back(o);
  }
  j["gains"] = nlohmann::ordered_json::array();
  for (const auto& g : r.gains) {
    nlohmann::ordered_json o;
    o["suite"] = to_string(g.suite);
    o["stimulus"] = g.stimulus_id;
    o["mean"] = g.mean;
    o["control_mean"] = g.control_mean;
    o["gain"] = g.gain;
    o["ratio"] = g.ratio ? nlohmann::ordered_json(*g.ratio) : nlohmann::ordered_json();
    j["gains"].push_back(o);
  }
  j["diagnostics"] = r.table.diagnostics;
  return j;
}

std::filesystem::path store_path(const CliConfig& cfg) {
  return cfg.store.value_or("emostim_results.jsonl");
}

std::unique_ptr<CompletionClient> make_client(const CliConfig& cfg, const std::vector<TaskSpec>& tasks,
                                              Clock& clock) {
  if (cfg.gateway.provider == "echo") return std::make_unique<EchoOracleClient>(tasks);
  if (cfg.gateway.provider != "openai")
    throw Error(ErrorKind::unsupported_provider, "unknown provider '" + cfg.gateway.provider + "'");
  if (cfg.gateway.api_key.empty())
    throw Error(ErrorKind::auth, "no API key configured (set EMOSTIM_API_KEY or api_key)");
  HttpTransportOptions opts;
  opts.api_base = cfg.gateway.api_base;
  opts.timeout = std::chrono::seconds(cfg.gateway.timeout_s);
  return std::make_unique<ModelGateway>(cfg.gateway, make_http_transport(opts), clock);
}

}  // namespace

EnvLookup process_environment() {
  return [](const std::string& name) -> std::optional<std::string> {
    if (const char* v = std::getenv(name.c_str()); v && *v) return std::string(v);
    return std::nullopt;
  };
}

CliConfig resolve_config(const nlohmann::json& file, const EnvLookup& env, const CliOverrides& flags) {
  CliConfig c;
  if (!file.is_null() && !file.is_object()) throw Error(ErrorKind::schema, "config file must be a JSON object");
  try {
    auto path_of = [&](const char* key) -> std::optional<std::filesystem::path> {
      if (file.is_object() && file.contains(key)) return file.at(key).get<std::string>();
      return std::nullopt;
    };
    c.catalog = path_of("catalog");
    c.asset_dir = path_of("asset_dir");
    c.store = path_of("store");
    if (file.is_object()) {
      c.workers = file.value("workers", c.workers);
      if (file.contains("seed")) c.seed = file.at("seed").get<std::uint64_t>();
      if (file.contains("format")) c.format = file.at("format").get<std::string>();
      auto& g = c.gateway;
      g.provider = file.value("provider", g.provider);
      g.api_base = file.value("api_base", g.api_base);
      g.api_key = file.value("api_key", g.api_key);
      g.rpm_limit = file.value("rpm_limit", g.rpm_limit);
      g.timeout_s = file.value("timeout_s", g.timeout_s);
      g.max_concurrency = file.value("max_concurrency", g.max_concurrency);
      g.supports_vision = file.value("supports_vision", g.supports_vision);
      g.retry.retry_max = file.value("retry_max", g.retry.retry_max);
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::schema, std::string("config file: ") + e.what());
  }

  if (auto v = env("EMOSTIM_CATALOG")) c.catalog = *v;
  if (auto v = env("EMOSTIM_ASSET_DIR")) c.asset_dir = *v;
  if (auto v = env("EMOSTIM_STORE")) c.store = *v;
  if (auto v = parse_env_number<int>(env, "EMOSTIM_WORKERS")) c.workers = *v;
  if (auto v = parse_env_number<std::uint64_t>(env, "EMOSTIM_SEED")) c.seed = *v;
  if (auto v = env("EMOSTIM_FORMAT")) c.format = *v;
  if (auto v = env("EMOSTIM_PROVIDER")) c.gateway.provider = *v;
  if (auto v = env("EMOSTIM_API_BASE")) c.gateway.api_base = *v;
  if (auto v = env("EMOSTIM_API_KEY")) c.gateway.api_key = *v;

  if (flags.catalog) c.catalog = flags.catalog;
  if (flags.asset_dir) c.asset_dir = flags.asset_dir;
  if (flags.store) c.store = flags.store;
  if (flags.workers) c.workers = *flags.workers;
  if (flags.seed) c.seed = flags.seed;
  if (flags.format) c.format = flags.format;
  if (flags.provider) c.gateway.provider = *flags.provider;

  if (c.workers < 1) throw Error(ErrorKind::invalid_argument, "workers must be >= 1");
  return c;
}

int run_cli(const std::vector<std::string>& args, std::istream& in, std::ostream& out,
            std::ostream& err, const EnvLookup& env) {
  CLI::App app{"Emotional stimulus evaluation toolkit", "emostim"};
  app.require_subcommand(1);
  app.fallthrough();

  std::optional<std::string> config_file;
  CliOverrides flags;
  app.add_option("--config", config_file, "JSON config file");
  app.add_option("--catalog", flags.catalog, "Catalog override file");
  app.add_option("--asset-dir", flags.asset_dir, "Image asset directory");
  app.add_option("--store", flags.store, "JSONL results store");
  app.add_option("--workers", flags.workers, "Parallel trial workers");
  app.add_option("--seed", flags.seed, "Random seed");
  app.add_option("--format", flags.format, "Output format");
  app.add_option("--provider", flags.provider, "Model provider: openai or echo");

  // catalog
  auto* catalog_cmd = app.add_subcommand("catalog", "Inspect the stimulus catalog");
  catalog_cmd->require_subcommand(1);
  catalog_cmd->fallthrough();
  auto* list_cmd = catalog_cmd->add_subcommand("list", "List stimuli");
  std::optional<std::string> f_polarity, f_modality, f_theory;
  list_cmd->add_option("--polarity", f_polarity);
  list_cmd->add_option("--modality", f_modality);
  list_cmd->add_option("--theory", f_theory);
  auto* show_cmd = catalog_cmd->add_subcommand("show", "Show one stimulus");
  std::string show_id;
  show_cmd->add_option("id", show_id)->required();

  // transform
  auto* transform_cmd = app.add_subcommand("transform", "Apply a transform to a prompt");
  std::string t_mode = "append";
  std::optional<std::string> t_stimulus, t_adjective, t_entities, t_prompt;
  int t_variant = 1;
  transform_cmd->add_option("--mode", t_mode, "append, prefix_context, word_inject or visual_attach");
  transform_cmd->add_option("--stimulus", t_stimulus);
  transform_cmd->add_option("--adjective", t_adjective);
  transform_cmd->add_option("--entities", t_entities, "Comma-separated entity list");
  transform_cmd->add_option("--variant", t_variant);
  transform_cmd->add_option("prompt", t_prompt, "Prompt text; read from stdin when absent");

  // run
  auto* run_cmd = app.add_subcommand("run", "Execute an evaluation grid");
  std::string r_grid;
  std::optional<std::string> r_tasks;
  std::optional<std::size_t> r_max;
  run_cmd->add_option("--grid", r_grid, "GridConfig JSON file")->required();
  run_cmd->add_option("--tasks", r_tasks, "Task file; overrides the grid's task_file");
  run_cmd->add_option("--max-trials", r_max, "Stop after this many new trials");

  // report / rank
  auto* report_cmd = app.add_subcommand("report", "Summarize a results store");
  auto* rank_cmd = app.add_subcommand("rank", "Rank stimuli within a suite");
  std::string k_suite;
  rank_cmd->add_option("--suite", k_suite)->required();

  // decode
  auto* decode_cmd = app.add_subcommand("decode", "Decode meta prompts from a tensor bundle");
  std::string d_bundle, d_pooling = "mean_tokens";
  std::optional<std::string> d_layers, d_prompts, d_polarity;
  std::size_t d_length = kDefaultMetaLength;
  decode_cmd->add_option("--bundle", d_bundle)->required();
  decode_cmd->add_option("--layers", d_layers, "Comma-separated layers; all when absent");
  decode_cmd->add_option("--prompts", d_prompts, "Comma-separated prompt indices; all when absent");
  decode_cmd->add_option("--pooling", d_pooling);
  decode_cmd->add_option("--length", d_length);
  decode_cmd->add_option("--polarity", d_polarity, "Label for the decoded family");

  // heatmap
  auto* heatmap_cmd = app.add_subcommand("heatmap", "Render token importance");
  std::string h_bundle, h_mode = "last_layer_received";
  std::size_t h_prompt = 0;
  heatmap_cmd->add_option("--bundle", h_bundle)->required();
  heatmap_cmd->add_option("--prompt", h_prompt);
  heatmap_cmd->add_option("--mode", h_mode);

  std::vector<const char*> argv{"emostim"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    err << app.help();
    return kExitUsage;
  }

  try {
    nlohmann::json file;
    if (config_file) {
      std::ifstream cf(*config_file);
      if (!cf) throw Error(ErrorKind::io, "cannot open config file " + *config_file);
      try {
        file = nlohmann::json::parse(cf);
      } catch (const nlohmann::json::parse_error& e) {
        throw Error(ErrorKind::schema, *config_file + ": " + e.what());
      }
    }
    const CliConfig cfg = resolve_config(file, env, flags);

    if (*list_cmd) {
      const auto catalog = active_catalog(cfg);
      StimulusFilter filter;
      if (f_polarity) filter.polarity = parse_polarity(*f_polarity);
      if (f_modality) filter.modality = parse_modality(*f_modality);
      if (f_theory) filter.theory = parse_theory(*f_theory);
      const auto rows = catalog.filter(filter);
      const auto fmt = require_format(cfg.format, "table", {"table", "csv", "json"});
      auto content = [](const EmotionStimulus& s) { return s.text ? *s.text : s.image_category.value_or(""); };
      if (fmt == "json") {
        auto arr = nlohmann::ordered_json::array();
        for (const auto& s : rows) arr.push_back(to_json(s));
        out << arr.dump(2) << "\n";
      } else if (fmt == "csv") {
        out << "id,polarity,modality,theory,content\n";
        for (const auto& s : rows)
          out << s.id << "," << to_string(s.polarity) << "," << to_string(s.modality) << ","
              << to_string(s.theory) << "," << csv_field(content(s)) << "\n";
      } else {
        out << "| id | polarity | modality | theory | content |\n|---|---|---|---|---|\n";
        for (const auto& s : rows)
          out << "| " << s.id << " | " << to_string(s.polarity) << " | " << to_string(s.modality)
              << " | " << to_string(s.theory) << " | " << md_cell(content(s)) << " |\n";
      }
      return kExitOk;
    }

    if (*show_cmd) {
      const auto catalog = active_catalog(cfg);
      const auto& s = catalog.get(show_id);
      require_format(cfg.format, "json", {"json"});
      out << to_json(s).dump(2) << "\n";
      return kExitOk;
    }

    if (*transform_cmd) {
      const auto catalog = active_catalog(cfg);
      const std::string prompt = t_prompt ? *t_prompt : read_all(in);
      const auto mode = parse_transform_mode(t_mode);
      AugmentedPrompt result;
      auto need_stimulus = [&]() -> const EmotionStimulus& {
        if (!t_stimulus) throw Error(ErrorKind::invalid_argument, "--stimulus is required for mode " + t_mode);
        return catalog.get(*t_stimulus);
      };
      switch (mode) {
        case TransformMode::append: result = append_stimulus(prompt, need_stimulus()); break;
        case TransformMode::prefix_context: result = prefix_context(prompt, need_stimulus()); break;
        case TransformMode::visual_attach:
          if (!cfg.asset_dir) throw Error(ErrorKind::invalid_argument, "--asset-dir is required for visual_attach");
          result = attach_image(prompt, need_stimulus(), *cfg.asset_dir, t_variant);
          break;
        case TransformMode::word_inject: {
          if (!t_entities) throw Error(ErrorKind::invalid_argument, "--entities is required for word_inject");
          const auto lexicon = default_adjective_lexicon();
          const std::string adjective = t_adjective ? *t_adjective : pick_adjective(lexicon, cfg.seed.value_or(0));
          auto injected = inject_adjective(prompt, split_list(*t_entities), adjective, lexicon);
          for (const auto& d : injected.diagnostics) err << "warning: " << d << "\n";
          result = std::move(injected.prompt);
          break;
        }
        default:
          throw Error(ErrorKind::invalid_argument,
                      "mode " + t_mode + " operates on demonstrations and is not available here");
      }
      const auto fmt = require_format(cfg.format, "text", {"text", "json"});
      if (fmt == "json") out << to_json(result).dump(2) << "\n";
      else out << result.final_text << "\n";
      return kExitOk;
    }

    if (*run_cmd) {
      auto grid = load_grid_config(r_grid);
      if (r_tasks) grid.task_file = *r_tasks;
      if (cfg.seed) grid.seed = *cfg.seed;
      if (cfg.asset_dir) grid.asset_dir = cfg.asset_dir;
      if (!grid.task_file) throw Error(ErrorKind::planning, "no task file given (grid task_file or --tasks)");
      const auto tasks = load_tasks(*grid.task_file);
      const auto catalog = active_catalog(cfg);
      const auto trials = plan_grid(grid, tasks, catalog);
      SystemClock clock;
      auto client = make_client(cfg, tasks, clock);
      ResultStore store(store_path(cfg));
      ExecuteOptions opts;
      opts.workers = cfg.workers;
      opts.max_new_trials = r_max;
      const auto result = execute(trials, *client, store, opts);
      err << "executed " << result.executed << ", skipped " << result.skipped << ", failed "
          << result.failed << "; store " << store.path().string() << "\n";
      const auto fmt = require_format(cfg.format, "markdown", {"markdown", "csv", "json"});
      if (fmt == "json") out << report_json(result.report).dump(2) << "\n";
      else if (fmt == "csv") out << report_csv(result.report);
      else out << report_markdown(result.report);
      return kExitOk;
    }

    if (*report_cmd || *rank_cmd) {
      const auto path = store_path(cfg);
      if (!std::filesystem::exists(path)) throw Error(ErrorKind::io, "store not found: " + path.string());
      ResultStore store(path);
      const auto report = build_report(store.records());
      const auto fmt = require_format(cfg.format, "markdown", {"markdown", "csv", "json"});
      if (*report_cmd) {
        if (fmt == "json") out << report_json(report).dump(2) << "\n";
        else if (fmt == "csv") out << report_csv(report);
        else out << report_markdown(report);
      } else {
        const auto ranking = rank_stimuli(report, parse_suite(k_suite));
        if (fmt == "json") {
          auto arr = nlohmann::ordered_json::array();
          for (const auto& e : ranking) arr.push_back({{"stimulus", e.stimulus_id}, {"mean", e.mean}});
          out << arr.dump(2) << "\n";
        } else if (fmt == "csv") {
          out << ranking_csv(ranking);
        } else {
          out << ranking_markdown(ranking);
        }
      }
      return kExitOk;
    }

    if (*decode_cmd) {
      const auto read = read_bundle(d_bundle);
      for (const auto& w : read.warnings) err << "warning: " << w << "\n";
      const auto& bundle = read.bundle;
      std::vector<int> layers = bundle.layers;
      if (d_layers) {
        layers.clear();
        for (const auto& s : split_list(*d_layers)) layers.push_back(std::stoi(s));
      }
      std::vector<std::size_t> prompts;
      if (d_prompts) {
        for (const auto& s : split_list(*d_prompts)) prompts.push_back(std::stoul(s));
      } else {
        for (std::size_t p = 0; p < bundle.prompts.size(); ++p) prompts.push_back(p);
      }
      for (auto p : prompts)
        if (p >= bundle.prompts.size())
          throw Error(ErrorKind::out_of_range, "prompt index " + std::to_string(p) + " out of range");
      std::optional<Polarity> polarity;
      if (d_polarity) polarity = parse_polarity(*d_polarity);
      const auto pooling = parse_pooling(d_pooling);
      const auto fmt = require_format(cfg.format, "text", {"text", "csv", "json"});
      auto arr = nlohmann::ordered_json::array();
      if (fmt == "csv") out << "layer,token_ids,text\n";
      for (int layer : layers) {
        const auto meta = decode_family(bundle, prompts, layer, pooling, d_length, polarity);
        std::string ids;
        for (std::size_t i = 0; i < meta.token_ids.size(); ++i)
          ids += (i ? " " : "") + std::to_string(meta.token_ids[i]);
        if (fmt == "json") {
          nlohmann::ordered_json o;
          o["layer"] = meta.layer;
          o["token_ids"] = meta.token_ids;
          o["text"] = meta.text;
          if (polarity) o["source_polarity"] = to_string(*polarity);
          arr.push_back(o);
        } else if (fmt == "csv") {
          out << meta.layer << "," << ids << "," << csv_field(meta.text) << "\n";
        } else {
          out << "layer " << meta.layer << ": " << meta.text << "\n";
        }
      }
      if (fmt == "json") out << arr.dump(2) << "\n";
      return kExitOk;
    }

    if (*heatmap_cmd) {
      const auto read = read_bundle(h_bundle);
      for (const auto& w : read.warnings) err << "warning: " << w << "\n";
      const auto weights = token_importance(read.bundle, h_prompt, parse_attention_mode(h_mode));
      const auto fmt = require_format(cfg.format, "ansi", {"ansi", "html", "csv", "json"});
      if (fmt == "json") {
        auto arr = nlohmann::ordered_json::array();
        for (const auto& w : weights) arr.push_back({{"token", w.token}, {"weight", w.weight}});
        out << arr.dump(2) << "\n";
      } else {
        out << render_heatmap(weights, parse_heatmap_format(fmt));
      }
      return kExitOk;
    }
  } catch (const Error& e) {
    err << "error [" << to_string(e.kind()) << "]: " << e.what() << "\n";
    return kExitRuntime;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  err << app.help();
  return kExitUsage;
}

}  // namespace emostim
