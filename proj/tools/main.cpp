// treex command-line front end. Every randomized subcommand takes the global
// --seed; outputs are written atomically.

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <thread>

#include "treex/baselines.hpp"
#include "treex/cartpole.hpp"
#include "treex/eval.hpp"
#include "treex/experiment.hpp"
#include "treex/extract.hpp"
#include "treex/forest.hpp"
#include "treex/gmm.hpp"
#include "treex/io.hpp"
#include "treex/synthetic.hpp"

using namespace treex;

namespace {

struct Globals {
  std::uint64_t seed = 0;
  std::size_t threads = std::max(1u, std::thread::hardware_concurrency());
  std::string config;
};

struct CsvArgs {
  std::string path;
  std::string label = "label";
  std::vector<std::string> categorical;
};

void add_csv_options(CLI::App* sub, CsvArgs& a, bool required) {
  auto* opt = sub->add_option("--data", a.path, "input CSV (header row required)");
  if (required) opt->required();
  sub->add_option("--label-column", a.label, "name of the label column")->capture_default_str();
  sub->add_option("--categorical", a.categorical, "columns to one-hot encode")->delimiter(',');
}

// Reads a CSV. With `enc` the stored layout is reused; a missing label column
// is tolerated so unlabeled files can be scored.
std::pair<Dataset, CsvEncoding> read_csv(const CsvArgs& a, const CsvEncoding* enc = nullptr) {
  const std::string text = read_file(a.path);
  const auto header = parse_csv(text.substr(0, text.find('\n')));
  CsvSchema schema;
  if (!header.empty() &&
      std::find(header[0].begin(), header[0].end(), a.label) != header[0].end())
    schema.label_column = a.label;
  schema.categorical.insert(a.categorical.begin(), a.categorical.end());
  if (enc) {
    for (const auto& c : enc->columns)
      if (c.categorical) schema.categorical.insert(c.name);
  }
  return parse_dataset(text, schema, enc);
}

std::optional<CsvEncoding> embedded_encoding(const json& j) {
  if (j.contains("input_encoding")) return encoding_from_json(j.at("input_encoding"));
  return std::nullopt;
}

std::vector<std::string> column_names(const CsvEncoding& e) {
  std::vector<std::string> out;
  for (const auto& c : e.columns) {
    if (!c.categorical) out.push_back(c.name);
    for (const auto& cat : c.categories) out.push_back(c.name + "=" + cat);
  }
  return out;
}

// Encoding stored next to a model referenced by a blackbox spec, if any.
std::optional<CsvEncoding> encoding_for_spec(const std::string& spec) {
  const auto colon = spec.find(':');
  if (colon == std::string::npos) return std::nullopt;
  return embedded_encoding(load_json(spec.substr(colon + 1)));
}

void write_json(const std::string& path, json j) {
  j["format_version"] = kFormatVersion;
  write_file_atomic(path, j.dump(2) + "\n");
}

void emit(const std::string& out, const std::string& content) {
  if (out.empty() || out == "-")
    std::cout << content;
  else
    write_file_atomic(out, content);
}

std::vector<std::size_t> parse_size_list(const std::string& s) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');) {
    try {
      std::size_t pos = 0;
      const long v = std::stol(item, &pos);
      if (pos != item.size() || v <= 0) throw std::invalid_argument(item);
      out.push_back(std::size_t(v));
    } catch (const std::logic_error&) {
      throw InputError("expected a comma-separated list of positive integers, got '" + s + "'");
    }
  }
  if (out.empty()) throw InputError("empty list '" + s + "'");
  return out;
}

ThresholdStrategy parse_strategy(const std::string& s) {
  if (s == "midpoints") return ThresholdStrategy::Midpoints;
  if (s == "quantiles") return ThresholdStrategy::Quantiles;
  throw InputError("unknown threshold strategy '" + s + "'");
}

// key = value lines; '#' starts a comment.
std::map<std::string, std::string> read_config_file(const std::string& path) {
  std::map<std::string, std::string> out;
  std::istringstream in(read_file(path));
  std::size_t line_no = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  };
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    line = trim(line.substr(0, line.find('#')));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw InputError(path + ":" + std::to_string(line_no) + ": expected key=value");
    std::string key = trim(line.substr(0, eq));
    if (key.rfind("--", 0) == 0) key = key.substr(2);
    out[key] = trim(line.substr(eq + 1));
  }
  return out;
}

std::vector<CLI::App*> active_chain(CLI::App& app) {
  std::vector<CLI::App*> chain{&app};
  for (CLI::App* cur = &app;;) {
    auto subs = cur->get_subcommands();
    if (subs.empty()) break;
    cur = subs.front();
    chain.push_back(cur);
  }
  return chain;
}

CLI::Option* find_option(const std::vector<CLI::App*>& chain, const std::string& key) {
  for (auto it = chain.rbegin(); it != chain.rend(); ++it)
    if (auto* opt = (*it)->get_option_no_throw("--" + key)) return opt;
  return nullptr;
}

// Numbers and booleans keep their JSON type; unset options become null.
json typed_value(const std::string& v) {
  if (v.empty()) return nullptr;
  if (v == "true" || v == "false") return v == "true";
  std::size_t used = 0;
  try {
    if (v.find_first_of(".eE") == std::string::npos && v.find_first_not_of("-0123456789") == std::string::npos) {
      const long long i = std::stoll(v, &used);
      if (used == v.size()) return i;
    }
    const double d = std::stod(v, &used);
    if (used == v.size() && std::isfinite(d)) return d;
  } catch (const std::exception&) {
  }
  return v;
}

json effective_config(const std::vector<CLI::App*>& chain) {
  json j;
  std::string command;
  for (auto* a : chain) {
    if (a != chain.front()) command += (command.empty() ? "" : " ") + a->get_name();
    for (const auto* opt : a->get_options()) {
      if (opt->get_lnames().empty()) continue;
      const std::string name = opt->get_lnames().front();
      if (name == "help" || name == "config") continue;
      const auto& res = opt->results();
      if (opt->get_expected_max() == 0) {
        j[name] = !res.empty() && opt->as<bool>();
      } else if (res.size() > 1 || opt->get_expected_max() > 1) {
        j[name] = json::array();
        for (const auto& v : res) j[name].push_back(typed_value(v));
      } else {
        j[name] = typed_value(res.empty() ? opt->get_default_str() : res.front());
      }
    }
  }
  j["command"] = command;
  return j;
}

}  // namespace

int main(int argc, char** argv) {
  warning_sink() = [](std::string_view msg) { std::cerr << "warning: " << msg << '\n'; };

  CLI::App app{"Decision-tree extraction from blackbox models"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--seed", g.seed, "random seed (env EXTRACT_SEED when absent)")
      ->envname("EXTRACT_SEED")
      ->capture_default_str();
  app.add_option("--threads", g.threads, "worker threads")->check(CLI::PositiveNumber);
  app.add_option("--config", g.config, "key=value file whose keys mirror flags (flags win)");

  // fit-gmm
  auto* fit = app.add_subcommand("fit-gmm", "fit a diagonal Gaussian mixture to a CSV");
  CsvArgs fit_csv;
  std::string fit_k = "auto", fit_out;
  EmConfig em;
  add_csv_options(fit, fit_csv, true);
  fit->add_option("--k", fit_k, "number of components or 'auto' (BIC over 1,2,5,10,20)")
      ->capture_default_str();
  fit->add_option("--max-iters", em.max_iters)->capture_default_str();
  fit->add_option("--n-init", em.n_init)->capture_default_str();
  fit->add_option("--out", fit_out, "output mixture JSON")->required();

  // train-rf
  auto* rf = app.add_subcommand("train-rf", "train a random-forest blackbox");
  CsvArgs rf_csv;
  ForestConfig fcfg;
  std::string rf_out;
  add_csv_options(rf, rf_csv, true);
  rf->add_flag("--balance", fcfg.balance, "class-balanced bootstrap");
  rf->add_option("--trees", fcfg.n_trees)->capture_default_str();
  rf->add_option("--max-depth", fcfg.max_depth)->capture_default_str();
  rf->add_option("--features-per-split", fcfg.features_per_split, "0 means sqrt(d)")
      ->capture_default_str();
  rf->add_option("--out", rf_out, "output forest JSON")->required();

  // train-cartpole
  auto* tcp = app.add_subcommand("train-cartpole", "learn a cart-pole policy by value iteration");
  PolicyConfig pcfg;
  std::string tcp_grid = "10,10,10,10", tcp_out;
  std::size_t tcp_episodes = 100;
  tcp->add_option("--grid", tcp_grid, "bins per dimension (x, x_dot, theta, theta_dot)")
      ->capture_default_str();
  tcp->add_option("--transitions", pcfg.n_transition_samples)->capture_default_str();
  tcp->add_option("--discount", pcfg.discount)->capture_default_str();
  tcp->add_option("--vi-tol", pcfg.vi_tol)->capture_default_str();
  tcp->add_option("--episodes", tcp_episodes, "rollouts for the reward report")
      ->capture_default_str();
  tcp->add_option("--out", tcp_out, "output policy JSON")->required();

  // collect
  auto* col = app.add_subcommand("collect", "roll out a cart-pole policy and record states");
  std::string col_policy, col_out;
  std::size_t col_n = 100;
  col->add_option("--policy", col_policy, "policy JSON")->required();
  col->add_option("--n", col_n, "number of states")->capture_default_str();
  col->add_option("--out", col_out, "output CSV (stdout when omitted)");

  // extract
  auto* ext = app.add_subcommand("extract", "extract a decision tree by active sampling");
  ExtractionConfig ecfg;
  std::string ext_gmm, ext_bb, ext_out, ext_strategy = "midpoints";
  ext->add_option("--gmm", ext_gmm, "input mixture JSON")->required();
  ext->add_option("--blackbox", ext_bb, "rf:path | cartpole:path | synthetic:path | tree:path")
      ->required();
  ext->add_option("--max-nodes", ecfg.max_nodes)->capture_default_str();
  ext->add_option("--samples-per-node", ecfg.samples_per_node)->capture_default_str();
  ext->add_option("--min-gain", ecfg.min_gain)->capture_default_str();
  ext->add_option("--strategy", ext_strategy, "midpoints | quantiles")->capture_default_str();
  ext->add_flag("--prune", ecfg.prune, "cost-complexity pruning on fresh samples");
  ext->add_option("--prune-samples", ecfg.prune_samples)->capture_default_str();
  ext->add_option("--out", ext_out, "output tree JSON")->required();

  // baseline
  auto* base = app.add_subcommand("baseline", "CART or born-again baseline tree");
  std::string base_kind, base_gmm, base_bb, base_out;
  CsvArgs base_csv;
  std::size_t base_nodes = 15, base_spn = 200, base_budget = 0;
  base->add_option("--kind", base_kind, "cart | born-again")
      ->required()
      ->check(CLI::IsMember({"cart", "born-again"}));
  base->add_option("--gmm", base_gmm, "input mixture JSON (born-again)");
  base->add_option("--blackbox", base_bb, "blackbox spec")->required();
  add_csv_options(base, base_csv, false);
  base->add_option("--max-nodes", base_nodes)->capture_default_str();
  base->add_option("--samples-per-node", base_spn)->capture_default_str();
  base->add_option("--budget", base_budget, "born-again: total mixture draws")
      ->capture_default_str();
  base->add_option("--out", base_out, "output tree JSON")->required();

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "fidelity of a tree against a blackbox");
  std::string ev_tree, ev_bb;
  CsvArgs ev_csv;
  Label ev_pos = 1;
  ev->add_option("--tree", ev_tree, "tree JSON")->required();
  ev->add_option("--blackbox", ev_bb, "blackbox spec")->required();
  add_csv_options(ev, ev_csv, true);
  ev->add_option("--positive-class", ev_pos, "class index treated as positive for F1")
      ->capture_default_str();

  // export
  auto* exp = app.add_subcommand("export", "render a tree");
  std::string exp_tree, exp_format = "dot", exp_out;
  std::vector<std::string> exp_columns, exp_classes;
  exp->add_option("--tree", exp_tree, "tree JSON")->required();
  exp->add_option("--format", exp_format, "dot | json")
      ->check(CLI::IsMember({"dot", "json"}))
      ->capture_default_str();
  exp->add_option("--columns", exp_columns, "feature names")->delimiter(',');
  exp->add_option("--classes", exp_classes, "class names")->delimiter(',');
  exp->add_option("--out", exp_out, "output file (stdout when omitted)");

  // generate
  auto* gen = app.add_subcommand("generate", "write a built-in synthetic dataset or blackbox");
  std::string gen_kind, gen_out;
  std::size_t gen_n = 578;
  gen->add_option("--kind", gen_kind, "risk (CSV) | oracle (box blackbox JSON)")
      ->required()
      ->check(CLI::IsMember({"risk", "oracle"}));
  gen->add_option("--n", gen_n, "rows for the risk dataset")->capture_default_str();
  gen->add_option("--out", gen_out, "output file (stdout when omitted)");

  // experiment fidelity-curve
  auto* xp = app.add_subcommand("experiment", "experiment harness");
  xp->require_subcommand(1);
  auto* curve = xp->add_subcommand("fidelity-curve", "fidelity vs tree size over seeds");
  std::string cv_task = "cartpole", cv_sizes = "3,7,11,15", cv_out, cv_policy;
  std::vector<std::string> cv_algs{"ours", "cart", "born-again"};
  CsvArgs cv_csv;
  std::size_t cv_seeds = 20, cv_spn = 0;
  Label cv_pos = 1;
  bool cv_no_timing = false;
  curve->add_option("--task", cv_task, "cartpole | csv")
      ->check(CLI::IsMember({"cartpole", "csv"}))
      ->capture_default_str();
  curve->add_option("--sizes", cv_sizes, "tree sizes")->capture_default_str();
  curve->add_option("--seeds", cv_seeds, "number of seeds (0 .. seeds-1)")->capture_default_str();
  curve->add_option("--algorithms", cv_algs, "subset of ours,cart,born-again")->delimiter(',');
  curve->add_option("--samples-per-node", cv_spn, "0 means the task default (200 / 1000)");
  curve->add_option("--policy", cv_policy, "cart-pole policy JSON (trained when omitted)");
  add_csv_options(curve, cv_csv, false);
  curve->add_option("--positive-class", cv_pos)->capture_default_str();
  curve->add_flag("--no-timing", cv_no_timing, "write wall_ms as 0 for reproducible output");
  curve->add_option("--out", cv_out, "results CSV (stdout when omitted)");

  const std::string globals =
      "\nGlobal options (accepted before or after the subcommand):\n"
      "  --seed UINT     random seed (env EXTRACT_SEED when absent)\n"
      "  --threads UINT  worker threads\n"
      "  --config TEXT   key=value file whose keys mirror flags (flags win)";
  for (auto* sub : app.get_subcommands([](CLI::App*) { return true; })) {
    sub->footer(globals);
    for (auto* nested : sub->get_subcommands([](CLI::App*) { return true; })) nested->footer(globals);
  }

  // Config-file keys become extra flags unless the same flag was given.
  std::vector<std::string> args(argv + 1, argv + argc);
  try {
    std::string config_path;
    std::vector<CLI::App*> chain{&app};
    for (std::size_t i = 0; i < args.size(); ++i) {
      if (args[i] == "--config" && i + 1 < args.size()) config_path = args[i + 1];
      if (args[i].rfind("--config=", 0) == 0) config_path = args[i].substr(9);
      if (args[i].rfind("-", 0) != 0)
        if (auto* sub = chain.back()->get_subcommand_no_throw(args[i])) chain.push_back(sub);
    }
    if (!config_path.empty()) {
      auto given = [&](const std::string& key) {
        return std::any_of(args.begin(), args.end(), [&](const std::string& a) {
          return a == "--" + key || a.rfind("--" + key + "=", 0) == 0;
        });
      };
      for (const auto& [key, value] : read_config_file(config_path)) {
        if (key == "config" || given(key)) continue;
        if (!find_option(chain, key)) continue;  // belongs to another subcommand
        args.push_back("--" + key + "=" + value);
      }
    }
    std::reverse(args.begin(), args.end());  // CLI11 consumes from the back
    app.parse(std::move(args));
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }

  const auto chain = active_chain(app);
  std::cerr << effective_config(chain).dump() << '\n';

  try {
    if (fit->parsed()) {
      auto [data, enc] = read_csv(fit_csv);
      em.seed = g.seed;
      EmResult res;
      if (fit_k == "auto") {
        res = fit_em_bic(data, default_k_grid(), em);
      } else {
        const auto k = parse_size_list(fit_k);
        if (k.size() != 1) throw InputError("--k takes one integer or 'auto'");
        res = fit_em(data, k[0], em);
      }
      json j = gmm_to_json(res.model);
      j["input_encoding"] = encoding_to_json(enc);
      j["log_likelihood"] = res.log_likelihood;
      j["bic"] = res.bic;
      write_json(fit_out, j);
      std::cout << "components " << res.model.components() << " log_likelihood "
                << res.log_likelihood << " bic " << res.bic << '\n';
    } else if (rf->parsed()) {
      auto [data, enc] = read_csv(rf_csv);
      if (!data.labels) throw InputError("train-rf needs a label column");
      fcfg.seed = g.seed;
      const RandomForest forest = train_random_forest(data, fcfg);
      json j = forest_to_json(forest);
      j["input_encoding"] = encoding_to_json(enc);
      write_json(rf_out, j);
      std::size_t agree = 0;
      for (std::size_t r = 0; r < data.n; ++r)
        agree += forest.predict(data.row(r)) == (*data.labels)[r];
      std::cout << "trees " << fcfg.n_trees << " train_accuracy "
                << double(agree) / double(data.n) << '\n';
    } else if (tcp->parsed()) {
      const auto grid = parse_size_list(tcp_grid);
      if (grid.size() != 4) throw InputError("--grid needs four bin counts");
      std::copy(grid.begin(), grid.end(), pcfg.grid.begin());
      pcfg.seed = g.seed;
      const CartPoleSystem sys;
      const TabularPolicy policy = learn_policy(sys, pcfg);
      write_json(tcp_out, policy_to_json(policy));
      std::printf("mean_reward %.2f\n",
                  mean_rollout_reward(policy, sys, tcp_episodes, stream_seed(g.seed, 1)));
    } else if (col->parsed()) {
      const TabularPolicy policy = policy_from_json(load_json(col_policy));
      emit(col_out, dataset_to_csv(collect_states(policy, CartPoleSystem{}, col_n, g.seed)));
    } else if (ext->parsed()) {
      const json gj = load_json(ext_gmm);
      const GaussianMixture gmm = gmm_from_json(gj);
      const auto f = load_blackbox(ext_bb);
      ecfg.seed = g.seed;
      ecfg.strategy = parse_strategy(ext_strategy);
      const auto res = extract_tree(gmm, *f, ecfg);
      json tj = tree_to_json(res.tree);
      if (auto enc = embedded_encoding(gj)) tj["column_names"] = column_names(*enc);
      write_json(ext_out, tj);
      std::cout << "nodes " << res.tree.size() << " blackbox_calls " << res.blackbox_calls << '\n';
    } else if (base->parsed()) {
      const auto f = load_blackbox(base_bb);
      ExtractionResult res;
      if (base_kind == "cart") {
        if (base_csv.path.empty()) throw InputError("cart baseline needs --data");
        const auto enc = encoding_for_spec(base_bb);
        res = cart_extract(read_csv(base_csv, enc ? &*enc : nullptr).first, *f, base_nodes);
      } else {
        if (base_gmm.empty()) throw InputError("born-again baseline needs --gmm");
        BornAgainConfig bc;
        bc.max_nodes = base_nodes;
        bc.samples_per_node = base_spn;
        bc.total_sample_budget = base_budget;
        bc.seed = g.seed;
        res = born_again_extract(gmm_from_json(load_json(base_gmm)), *f, bc);
      }
      write_json(base_out, tree_to_json(res.tree));
      std::cout << "nodes " << res.tree.size() << " blackbox_calls " << res.blackbox_calls << '\n';
    } else if (ev->parsed()) {
      const DecisionTree tree = tree_from_json(load_json(ev_tree));
      const auto f = load_blackbox(ev_bb);
      const auto enc = encoding_for_spec(ev_bb);
      const Dataset data = read_csv(ev_csv, enc ? &*enc : nullptr).first;
      const auto rep = fidelity(tree, *f, data, ev_pos);
      json out{{"accuracy", rep.accuracy}, {"n_test", rep.n_test}, {"confusion", rep.confusion}};
      out["f1"] = rep.f1 ? json(*rep.f1) : json(nullptr);
      std::cout << out.dump() << '\n';
    } else if (exp->parsed()) {
      const json j = load_json(exp_tree);
      const DecisionTree tree = tree_from_json(j);
      if (exp_format == "dot") {
        std::vector<std::string> cols = exp_columns;
        if (cols.empty() && j.contains("column_names"))
          cols = j.at("column_names").get<std::vector<std::string>>();
        emit(exp_out, export_dot(tree, cols, exp_classes));
      } else {
        emit(exp_out, tree_to_json(tree).dump(2) + "\n");
      }
    } else if (gen->parsed()) {
      if (gen_kind == "risk") {
        emit(gen_out, dataset_to_csv(make_risk_dataset(gen_n, 50, 0.118, g.seed)));
      } else {
        const auto p = make_oracle_problem();
        json j = box_function_to_json(*p.f);
        j["format_version"] = kFormatVersion;
        emit(gen_out, j.dump(2) + "\n");
      }
    } else if (curve->parsed()) {
      CurveConfig cc;
      cc.sizes = parse_size_list(cv_sizes);
      cc.algorithms.clear();
      for (const auto& a : cv_algs) cc.algorithms.push_back(parse_algorithm(a));
      cc.n_seeds = cv_seeds;
      cc.positive_class = cv_pos;
      cc.threads = g.threads;
      cc.record_timing = !cv_no_timing;
      std::unique_ptr<TaskPreset> task;
      if (cv_task == "cartpole") {
        CartPolePreset::Options o;
        if (cv_spn) o.samples_per_node = cv_spn;
        if (!cv_policy.empty()) {
          auto pol = std::make_shared<TabularPolicy>(policy_from_json(load_json(cv_policy)));
          task = std::make_unique<CartPolePreset>(o, std::move(pol));
        } else {
          o.policy.seed = g.seed;
          task = std::make_unique<CartPolePreset>(o);
        }
      } else {
        if (cv_csv.path.empty()) throw InputError("--task csv needs --data");
        ClassificationPreset::Options o;
        if (cv_spn) o.samples_per_node = cv_spn;
        o.forest.seed = g.seed;
        task = std::make_unique<ClassificationPreset>(read_csv(cv_csv).first, o);
      }
      const auto result = run_fidelity_curve(*task, cc);
      std::ostringstream csv;
      result.write_csv(csv);
      emit(cv_out, csv.str());
      for (auto a : cc.algorithms)
        for (auto s : cc.sizes)
          if (auto med = result.median(algorithm_name(a), s))
            std::fprintf(stderr, "%s size %zu median_f1 %.4f\n", algorithm_name(a).c_str(), s,
                         *med);
    }
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
