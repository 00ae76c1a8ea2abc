// trigon_cli: diagnostics, rewiring, training sweeps and ablations.
//
// Exit status: 0 when every requested seed completed, 1 when some seed
// diverged or failed, 2 on invalid input, 3 on a degenerate construction.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "trigon/data.hpp"
#include "trigon/diagnostics.hpp"
#include "trigon/gcn.hpp"
#include "trigon/geometry.hpp"
#include "trigon/selector.hpp"

namespace fs = std::filesystem;
using namespace trigon;

namespace {

struct RunConfig {
  std::string command;
  std::string data;
  std::string out = "trigon_out";
  std::vector<std::string> methods{"trigon"};
  std::vector<std::uint64_t> seeds{0};
  std::vector<std::size_t> depths;
  std::vector<std::string> edges;
  std::uint64_t split_seed = 0;
  std::size_t layers = 2;
  std::size_t hidden = 32;
  double lr = 0.005;
  double weight_decay = 5e-5;
  double dropout = 0.5;
  std::size_t epochs = 500;
  std::size_t patience = 100;
  std::size_t knn_k = 10;
  std::string metric = "euclidean";
  double tau = 1.0;
  std::size_t refresh = 10;
  std::size_t cap = kDefaultCandidateCap;
  std::size_t selector_hidden = 64;
  double selector_lr = 0.005;
  std::string views = "original,knn,delaunay";
  // synth
  std::string kind = "sbm";
  std::size_t n = 400;
  std::size_t blocks = 2;
  double p_intra = 0.02;
  double p_inter = 0.10;
  double separation = 1.5;
  double noise = 1.0;
  std::size_t dim = 16;
};

std::string num(double v) {
  std::ostringstream s;
  s.precision(17);
  s << v;
  return s.str();
}

template <class T>
std::string join(const std::vector<T>& v) {
  std::ostringstream s;
  for (std::size_t i = 0; i < v.size(); ++i) s << (i ? "," : "") << v[i];
  return s.str();
}

std::vector<std::pair<std::string, std::string>> serialize(const RunConfig& c) {
  return {
      {"command", c.command},
      {"data", c.data},
      {"methods", join(c.methods)},
      {"seeds", join(c.seeds)},
      {"depths", join(c.depths)},
      {"edges", join(c.edges)},
      {"split_seed", std::to_string(c.split_seed)},
      {"layers", std::to_string(c.layers)},
      {"hidden", std::to_string(c.hidden)},
      {"lr", num(c.lr)},
      {"weight_decay", num(c.weight_decay)},
      {"dropout", num(c.dropout)},
      {"epochs", std::to_string(c.epochs)},
      {"patience", std::to_string(c.patience)},
      {"knn_k", std::to_string(c.knn_k)},
      {"metric", c.metric},
      {"tau", num(c.tau)},
      {"refresh", std::to_string(c.refresh)},
      {"candidate_cap", std::to_string(c.cap)},
      {"selector_hidden", std::to_string(c.selector_hidden)},
      {"selector_lr", num(c.selector_lr)},
      {"views", c.views},
      {"kind", c.kind},
      {"n", std::to_string(c.n)},
      {"blocks", std::to_string(c.blocks)},
      {"p_intra", num(c.p_intra)},
      {"p_inter", num(c.p_inter)},
      {"separation", num(c.separation)},
      {"noise", num(c.noise)},
      {"dim", std::to_string(c.dim)},
  };
}

void validate(const RunConfig& c) {
  if (!(c.lr > 0)) throw InputError("--lr must be > 0");
  if (!(c.selector_lr > 0)) throw InputError("--selector-lr must be > 0");
  if (c.dropout < 0 || c.dropout >= 1) throw InputError("--dropout must lie in [0, 1)");
  if (c.layers < 1) throw InputError("--layers must be >= 1");
  for (auto d : c.depths)
    if (d < 1) throw InputError("--depths entries must be >= 1");
  if (c.seeds.empty()) throw InputError("at least one seed is required");
  if (!(c.tau > 0)) throw InputError("--tau must be > 0");
  if (c.hidden < 1 || c.selector_hidden < 1) throw InputError("hidden sizes must be >= 1");
}

/// Output file whose first lines are the serialized config, commented out.
std::ofstream open_out(const RunConfig& c, const std::string& name) {
  fs::create_directories(c.out);
  std::ofstream f(fs::path(c.out) / name);
  if (!f) throw InputError("cannot write '" + (fs::path(c.out) / name).string() + "'");
  for (const auto& [k, v] : serialize(c)) f << "# " << k << '=' << v << '\n';
  return f;
}

void write_config(const RunConfig& c) {
  fs::create_directories(c.out);
  std::ofstream f(fs::path(c.out) / "config.txt");
  for (const auto& [k, v] : serialize(c)) f << k << '=' << v << '\n';
}

std::size_t worker_count() {
  if (const char* env = std::getenv("TRIGON_WORKERS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && v >= 1) return static_cast<std::size_t>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

/// Runs jobs [0, n) on a bounded pool; each job writes only its own slot.
template <class F>
void parallel_for(std::size_t n, F job) {
  const std::size_t workers = std::min(worker_count(), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) job(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) job(i);
    });
  }
  for (auto& t : pool) t.join();
}

std::uint8_t parse_views(const std::string& s) {
  std::uint8_t v = 0;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok == "original") {
      v |= kSourceOriginal;
    } else if (tok == "knn") {
      v |= kSourceKnn;
    } else if (tok == "delaunay") {
      v |= kSourceDelaunay;
    } else if (!tok.empty()) {
      throw InputError("unknown view '" + tok + "'");
    }
  }
  return v;
}

Metric parse_metric(const std::string& m) {
  if (m == "euclidean") return Metric::kEuclidean;
  if (m == "cosine") return Metric::kCosine;
  throw InputError("unknown metric '" + m + "'");
}

GcnConfig gcn_config(const RunConfig& c, std::size_t layers) {
  GcnConfig g;
  g.layers = layers;
  g.hidden = c.hidden;
  g.dropout = c.dropout;
  g.lr = c.lr;
  g.weight_decay = c.weight_decay;
  g.max_epochs = c.epochs;
  g.patience = c.patience;
  return g;
}

TrigonConfig trigon_config(const RunConfig& c, std::size_t layers) {
  TrigonConfig t;
  t.gcn = gcn_config(c, layers);
  t.knn_k = c.knn_k;
  t.metric = parse_metric(c.metric);
  t.views = parse_views(c.views);
  t.refresh_period = c.refresh;
  t.candidate_cap = c.cap;
  t.selector_hidden = c.selector_hidden;
  t.selector_lr = c.selector_lr;
  t.temperature = c.tau;
  return t;
}

Dataset load(const RunConfig& c) {
  if (c.data.empty()) throw InputError("--data is required");
  auto d = load_dataset(c.data, c.split_seed);
  for (const auto& note : d.notes) std::cerr << "note: " << note << '\n';
  return d;
}

/// Deterministic graph constructions (everything except trigon).
Graph static_rewire(const Dataset& d, const RunConfig& c, const std::string& method) {
  if (method == "identity") return d.graph;
  if (method == "delaunay") return delaunay(project_2d(d.features)).graph;
  if (method == "knn-union") {
    auto knn = knn_graph(d.features, std::min(c.knn_k, d.num_nodes() - 1), parse_metric(c.metric));
    const auto orig = d.graph.edge_list(), extra = knn.edge_list();
    std::vector<Edge> e(orig.begin(), orig.end());
    e.insert(e.end(), extra.begin(), extra.end());
    return Graph(d.num_nodes(), EdgeList::canonical(std::move(e)));
  }
  throw InputError("unknown method '" + method + "' (trigon, delaunay, knn-union, identity)");
}

void check_method(const std::string& m) {
  if (m != "trigon" && m != "identity" && m != "delaunay" && m != "knn-union") {
    throw InputError("unknown method '" + m + "' (trigon, delaunay, knn-union, identity)");
  }
}

// ---------------------------------------------------------------------------
// diagnose

void report_graph(std::ostream& out, const std::string& name, const Graph& g, const std::vector<double>& ps) {
  out << "[graph " << name << "]\n";
  auto r = diagnose(g, ps);
  if (r.num_components > 1) {
    out << "warning = disconnected (" << r.num_components << " components); per-component reports follow\n";
    std::cerr << "warning: graph '" << name << "' has " << r.num_components << " components\n";
  }
  write_report(out, r);
  if (r.num_components > 1) {
    std::size_t count = 0;
    auto comp = connected_components(g, &count);
    std::vector<std::vector<Node>> members(count);
    for (Node i = 0; i < g.num_nodes(); ++i) members[comp[i]].push_back(i);
    std::size_t singletons = 0;
    for (std::size_t k = 0; k < count; ++k) {
      if (members[k].size() < 2) {
        ++singletons;
        continue;
      }
      out << "\n[component " << name << ' ' << k << " first_node=" << members[k].front()
          << " size=" << members[k].size() << "]\n";
      write_report(out, diagnose(induced_subgraph(g, members[k]), ps));
    }
    out << "\nisolated_nodes = " << singletons << '\n';
  }
  out << '\n';
}

int cmd_diagnose(const RunConfig& c) {
  auto d = load(c);
  std::vector<std::pair<std::string, Graph>> graphs{{"original", d.graph}};
  for (const auto& path : c.edges) {
    std::size_t hi = 0;
    auto e = read_edge_list(path, &hi);
    if (hi > d.num_nodes()) throw InputError("edge list '" + path + "' references nodes outside the dataset");
    graphs.emplace_back(path, Graph(d.num_nodes(), e));
  }
  const auto ps = default_p_grid();
  auto rep = open_out(c, "diagnostics.txt");
  auto curve = open_out(c, "curve.csv");
  curve.precision(12);
  curve << "graph,p,mean_resistance\n";
  for (const auto& [name, g] : graphs) {
    report_graph(rep, name, g, ps);
    for (const auto& pt : top_p_resistance_curve(g, ps)) curve << name << ',' << pt.p << ',' << pt.mean_resistance << '\n';
  }
  write_config(c);
  return 0;
}

// ---------------------------------------------------------------------------
// rewire

void write_trace(std::ostream& out, const std::vector<TraceRow>& trace) {
  out.precision(12);
  out << "epoch,candidates,selected,edges,l_contr,l_struct,l_part,l_total,train_loss,val_acc,test_acc,fallback\n";
  for (const auto& r : trace) {
    out << r.epoch << ',' << r.candidates << ',' << r.selected << ',' << r.edges << ',' << r.losses.contrastive << ','
        << r.losses.structural << ',' << r.losses.participation << ',' << r.losses.total << ',' << r.train_loss << ','
        << r.val_acc << ',' << r.test_acc << ',' << (r.fallback ? 1 : 0) << '\n';
  }
}

int cmd_rewire(const RunConfig& c) {
  if (c.methods.size() != 1) throw InputError("rewire takes exactly one --method");
  const auto& method = c.methods.front();
  check_method(method);
  auto d = load(c);
  Graph g;
  int status = 0;
  if (method == "trigon") {
    auto res = run_trigon(d, trigon_config(c, c.layers), c.seeds.front());
    for (const auto& line : res.log) std::cerr << "trigon: " << line << '\n';
    if (res.diverged) status = 1;
    g = res.graph;
    auto m = open_out(c, "metrics.csv");
    write_trace(m, res.trace);
  } else {
    g = static_rewire(d, c, method);
  }
  auto e = open_out(c, "edges_rewired.tsv");
  write_edge_list(e, g.edge_list());
  write_config(c);
  return status;
}

// ---------------------------------------------------------------------------
// train / ablate

struct SeedResult {
  bool ok = false;
  std::string status = "ok";
  std::size_t best_epoch = 0;
  double val_acc = 0.0;
  double test_acc = 0.0;
};

SeedResult run_seed(const Dataset& d, const std::string& method, const TrigonConfig& tcfg,
                    std::uint64_t seed, const std::optional<Graph>& fixed) {
  SeedResult r;
  try {
    bool diverged = false;
    if (method == "trigon") {
      auto res = run_trigon(d, tcfg, seed);
      diverged = res.diverged;
      r.best_epoch = res.best_epoch, r.val_acc = res.best_val_acc, r.test_acc = res.test_acc;
    } else {
      auto res = train_gcn(d, *fixed, tcfg.gcn, seed);
      diverged = res.diverged;
      r.best_epoch = res.best_epoch, r.val_acc = res.best_val_acc, r.test_acc = res.test_acc;
    }
    r.ok = !diverged;
    if (diverged) r.status = "diverged";
  } catch (const std::exception& e) {
    r.status = "failed";
    std::cerr << "seed " << seed << " (" << method << "): " << e.what() << '\n';
  }
  return r;
}

struct Aggregate {
  std::size_t n = 0;
  double val = 0.0, test = 0.0, stderr_ = 0.0;
};

Aggregate aggregate(const std::vector<SeedResult>& rs) {
  Aggregate a;
  std::vector<double> t;
  for (const auto& r : rs) {
    if (!r.ok) continue;
    ++a.n;
    a.val += r.val_acc;
    t.push_back(r.test_acc);
    a.test += r.test_acc;
  }
  if (a.n == 0) return a;
  a.val /= double(a.n);
  a.test /= double(a.n);
  if (a.n > 1) {
    double ss = 0;
    for (double x : t) ss += (x - a.test) * (x - a.test);
    a.stderr_ = std::sqrt(ss / double(a.n - 1)) / std::sqrt(double(a.n));
  }
  return a;
}

struct Job {
  std::string label;   // method or ablation variant
  std::string method;  // trigon or a static construction
  std::size_t depth = 2;
  TrigonConfig cfg;
  std::uint64_t seed = 0;
};

int run_jobs(const RunConfig& c, const Dataset& d, const std::vector<Job>& jobs, const std::string& first_col,
             bool with_depth) {
  // static graphs are built once per method, before dispatch
  std::map<std::string, Graph> fixed;
  for (const auto& j : jobs) {
    if (j.method != "trigon" && !fixed.count(j.method)) fixed.emplace(j.method, static_rewire(d, c, j.method));
  }
  std::vector<SeedResult> results(jobs.size());
  parallel_for(jobs.size(), [&](std::size_t i) {
    const auto& j = jobs[i];
    std::optional<Graph> g;
    if (auto it = fixed.find(j.method); it != fixed.end()) g = it->second;
    results[i] = run_seed(d, j.method, j.cfg, j.seed, g);
  });

  auto m = open_out(c, "metrics.csv");
  m.precision(12);
  m << "kind," << first_col << (with_depth ? ",depth" : "") << ",seed,n,status,best_epoch,val_acc,test_acc,test_stderr\n";
  int status = 0;
  std::vector<std::pair<std::string, std::size_t>> groups;
  for (const auto& j : jobs) {
    if (std::find(groups.begin(), groups.end(), std::make_pair(j.label, j.depth)) == groups.end())
      groups.emplace_back(j.label, j.depth);
  }
  std::ostringstream depth_csv;
  depth_csv.precision(12);
  for (const auto& [label, depth] : groups) {
    std::vector<SeedResult> group;
    for (std::size_t i = 0; i < jobs.size(); ++i) {
      if (jobs[i].label != label || jobs[i].depth != depth) continue;
      const auto& r = results[i];
      group.push_back(r);
      if (!r.ok) status = 1;
      m << "seed," << label << (with_depth ? "," + std::to_string(depth) : "") << ',' << jobs[i].seed << ",1,"
        << r.status << ',' << r.best_epoch << ',' << r.val_acc << ',' << r.test_acc << ",\n";
    }
    auto a = aggregate(group);
    m << "aggregate," << label << (with_depth ? "," + std::to_string(depth) : "") << ",all," << a.n << ','
      << (a.n == group.size() ? "ok" : "partial") << ",," << a.val << ',' << a.test << ',' << a.stderr_ << '\n';
    depth_csv << label << ',' << depth << ',' << a.n << ',' << a.test << ',' << a.stderr_ << '\n';
    std::cout << label << (with_depth ? " depth " + std::to_string(depth) : "") << ": test " << a.test << " +- "
              << a.stderr_ << " (" << a.n << "/" << group.size() << " seeds)\n";
  }
  if (with_depth && !c.depths.empty()) {
    auto f = open_out(c, "depth.csv");
    f << "method,depth,n,test_acc,test_stderr\n" << depth_csv.str();
  }
  write_config(c);
  return status;
}

int cmd_train(const RunConfig& c) {
  for (const auto& m : c.methods) check_method(m);
  auto d = load(c);
  std::vector<std::size_t> depths = c.depths.empty() ? std::vector<std::size_t>{c.layers} : c.depths;
  std::vector<Job> jobs;
  for (const auto& m : c.methods) {
    for (auto depth : depths) {
      for (auto seed : c.seeds) jobs.push_back({m, m, depth, trigon_config(c, depth), seed});
    }
  }
  if (std::any_of(jobs.begin(), jobs.end(), [](const Job& j) { return j.method == "trigon"; }) &&
      jobs.front().cfg.views == 0) {
    throw InputError("at least one candidate view must be enabled");
  }
  return run_jobs(c, d, jobs, "method", true);
}

int cmd_ablate(const RunConfig& c) {
  auto d = load(c);
  const auto base = trigon_config(c, c.layers);
  struct Variant {
    std::string name;
    TrigonConfig cfg;
  };
  std::vector<Variant> variants;
  auto add = [&](std::string name, auto edit) {
    TrigonConfig t = base;
    edit(t);
    if (t.views == 0) throw InputError("variant '" + name + "' has no candidate views enabled");
    variants.push_back({std::move(name), std::move(t)});
  };
  add("trigon", [](TrigonConfig&) {});
  add("all-triangles", [](TrigonConfig& t) { t.mode = SelectionMode::kAll; });
  add("random-30", [](TrigonConfig& t) { t.mode = SelectionMode::kRandom, t.random_fraction = 0.3; });
  add("random-60", [](TrigonConfig& t) { t.mode = SelectionMode::kRandom, t.random_fraction = 0.6; });
  add("no-knn-view", [](TrigonConfig& t) { t.views &= static_cast<std::uint8_t>(~kSourceKnn); });
  add("no-original-view", [](TrigonConfig& t) { t.views &= static_cast<std::uint8_t>(~kSourceOriginal); });
  add("no-l-contr", [](TrigonConfig& t) { t.losses.contrastive = false; });
  add("no-l-struct", [](TrigonConfig& t) { t.losses.structural = false; });
  add("no-l-part", [](TrigonConfig& t) { t.losses.participation = false; });
  std::vector<Job> jobs;
  for (const auto& v : variants) {
    for (auto seed : c.seeds) jobs.push_back({v.name, "trigon", c.layers, v.cfg, seed});
  }
  return run_jobs(c, d, jobs, "variant", false);
}

// ---------------------------------------------------------------------------
// synth

int cmd_synth(const RunConfig& c) {
  Dataset d;
  if (c.kind == "sbm") {
    SbmConfig s;
    s.n = c.n;
    s.blocks = c.blocks;
    s.p_intra = c.p_intra;
    s.p_inter = c.p_inter;
    s.separation = c.separation;
    s.noise = c.noise;
    s.dim = c.dim;
    d = synth_sbm(s, c.seeds.front());
  } else if (c.kind == "moons") {
    d = synth_two_moons(c.n, c.noise, c.seeds.front());
  } else {
    throw InputError("unknown --kind '" + c.kind + "' (sbm, moons)");
  }
  for (const auto& note : d.notes) std::cerr << "note: " << note << '\n';
  save_dataset(d, c.out);
  write_config(c);
  std::cout << "wrote " << d.num_nodes() << " nodes, " << d.graph.num_edges() << " edges, homophily "
            << edge_homophily(d.graph, d.labels) << " to " << c.out << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Triangle-based graph rewiring and structural diagnostics"};
  app.require_subcommand(1);
  RunConfig c;

  auto common = [&](CLI::App* s, bool data_required) {
    auto* o = s->add_option("--data", c.data, "dataset directory (edges.tsv, features.tsv, labels.tsv)");
    if (data_required) o->required();
    s->add_option("--out", c.out, "output directory");
    s->add_option("--split-seed", c.split_seed, "seed for the split when split.tsv is absent");
  };
  auto model = [&](CLI::App* s) {
    s->add_option("--layers", c.layers, "GCN depth");
    s->add_option("--hidden", c.hidden, "GCN hidden width");
    s->add_option("--lr", c.lr, "GCN learning rate");
    s->add_option("--weight-decay", c.weight_decay, "GCN weight decay");
    s->add_option("--dropout", c.dropout, "GCN dropout rate");
    s->add_option("--epochs", c.epochs, "maximum epochs");
    s->add_option("--patience", c.patience, "early-stopping patience");
    s->add_option("--k", c.knn_k, "k for the k-NN view");
    s->add_option("--metric", c.metric, "k-NN metric (euclidean, cosine)");
    s->add_option("--tau", c.tau, "Gumbel-softmax temperature");
    s->add_option("--refresh", c.refresh, "Delaunay refresh period in epochs");
    s->add_option("--cap", c.cap, "candidate triangle cap");
    s->add_option("--selector-hidden", c.selector_hidden, "selector MLP width");
    s->add_option("--selector-lr", c.selector_lr, "selector learning rate");
    s->add_option("--views", c.views, "candidate views, comma separated (original, knn, delaunay)");
  };

  auto* diag = app.add_subcommand("diagnose", "structural report and top-p resistance curve");
  common(diag, true);
  diag->add_option("--edges", c.edges, "additional edge list(s) to report on");

  auto* rew = app.add_subcommand("rewire", "write a rewired edge list");
  common(rew, true);
  model(rew);
  rew->add_option("--method", c.methods, "trigon, delaunay, knn-union or identity")->expected(1);
  std::uint64_t seed = 0;
  rew->add_option("--seed", seed, "master seed");

  auto* train = app.add_subcommand("train", "train a GCN per seed on the chosen graph");
  common(train, true);
  model(train);
  train->add_option("--method", c.methods, "comma separated methods")->delimiter(',');
  train->add_option("--seeds", c.seeds, "comma separated seeds")->delimiter(',');
  train->add_option("--depths", c.depths, "comma separated depth sweep")->delimiter(',');

  auto* abl = app.add_subcommand("ablate", "selection-strategy and loss ablations");
  common(abl, true);
  model(abl);
  abl->add_option("--seeds", c.seeds, "comma separated seeds")->delimiter(',');

  auto* syn = app.add_subcommand("synth", "generate a synthetic dataset directory");
  syn->add_option("--out", c.out, "output directory")->required();
  syn->add_option("--kind", c.kind, "sbm or moons");
  syn->add_option("--n", c.n, "node count");
  syn->add_option("--blocks", c.blocks, "SBM blocks");
  syn->add_option("--p-intra", c.p_intra, "SBM intra-block edge probability");
  syn->add_option("--p-inter", c.p_inter, "SBM inter-block edge probability");
  syn->add_option("--separation", c.separation, "class-mean distance in noise units");
  syn->add_option("--noise", c.noise, "feature noise std (moons: coordinate noise)");
  syn->add_option("--dim", c.dim, "SBM feature dimension");
  syn->add_option("--seed", seed, "generator seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (rew->parsed() || syn->parsed()) c.seeds = {seed};
    c.command = app.get_subcommands().front()->get_name();
    validate(c);
    if (diag->parsed()) return cmd_diagnose(c);
    if (rew->parsed()) return cmd_rewire(c);
    if (train->parsed()) return cmd_train(c);
    if (abl->parsed()) return cmd_ablate(c);
    return cmd_synth(c);
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const DegenerateError& e) {
    std::cerr << "degenerate: " << e.what() << '\n';
    return 3;
  }
}
