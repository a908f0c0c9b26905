// specex: headless runs, replay verification, benchmarks, the HTTP server and
// the synthetic corpus generator.
//
// Exit codes: 0 success, 1 usage or input error, 2 divergence / verification failure.

#include "specex/error.hpp"
#include "specex/headless.hpp"
#include "specex/server.hpp"
#include "specex/synth.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <sstream>

namespace {

using specex::Error;

constexpr int kUsage = 1;
constexpr int kDivergence = 2;

nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("missing_path", "cannot open " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error("invalid_config", path + ": " + e.what());
  }
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("io_error", "cannot write " + path);
  out << text;
}

std::vector<std::size_t> parse_list(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    std::size_t used = 0;
    const auto v = std::stoul(item, &used);
    if (used != item.size() || v == 0) throw Error("usage", "bad list element " + item);
    out.push_back(v);
  }
  if (out.empty()) throw Error("usage", "empty list");
  return out;
}

struct Common {
  std::string corpus;
  std::string config;
  std::uint64_t seed = 0;
  std::string policy = "none";
  std::string trigger = "metric";
  std::string out;
  std::string log;
  int workers = -1;
};

specex::SessionConfig session_config(const Common& c) {
  specex::SessionConfig sc;
  if (!c.config.empty()) sc.merge_json(read_json_file(c.config));
  sc.seed = c.seed;
  sc.trigger_mode = specex::trigger_mode_from_string(c.trigger);
  if (c.workers >= 0) sc.speculation.max_workers = static_cast<std::size_t>(c.workers);
  return sc;
}

int cmd_run(const Common& c) {
  specex::RunOptions o;
  o.corpus = c.corpus;
  o.config = session_config(c);
  o.policy = specex::AutoPolicy::parse(c.policy, c.seed);
  if (!c.log.empty()) o.log_path = c.log;
  auto r = specex::run_headless(o);
  const auto text = r.results.dump(2) + "\n";
  if (!c.out.empty()) {
    write_text(c.out, text);
  }
  const auto& by = r.results["sandboxes_by_status"];
  std::cout << "sandboxes_total " << r.results["sandboxes_total"] << "  accepted " << by["accepted"] << "  rejected "
            << by["rejected"] << "  timed_out " << by["timed_out"] << "  cancelled " << by["cancelled"] << "\n"
            << "triggers " << r.results["triggers"] << "  leaves " << r.results["leaves"] << "  topics "
            << r.results["topics"] << "\n"
            << "latency_ms p50 " << r.results["latency_ms"]["p50"] << "  p95 " << r.results["latency_ms"]["p95"]
            << "\n"
            << "final_digest " << r.results["final_digest"].get<std::string>() << "\n";
  return 0;
}

int cmd_replay(const std::string& log) {
  try {
    auto session = specex::replay(std::filesystem::path(log));
    std::cout << "ok\nentries " << session->provenance().size() << "\nfinal_digest "
              << session->snapshot()["digest"].get<std::string>() << "\n";
    return 0;
  } catch (const Error& e) {
    if (e.code() == "missing_path") throw;
    std::cout << "FAILED: " << e.what() << "\n";
    return kDivergence;
  }
}

int cmd_bench(const Common& c, const std::string& ns, const std::string& bs, const std::string& policies,
              std::size_t stride, int inject_ms, bool skip_l1) {
  auto base = session_config(c);
  std::vector<specex::BenchCell> cells;
  for (auto n : parse_list(ns)) {
    for (auto b : parse_list(bs)) {
      std::stringstream ss(policies);
      std::string p;
      while (std::getline(ss, p, ',')) cells.push_back({n, b, specex::AutoPolicy::parse(p, c.seed)});
    }
  }
  const auto rows = specex::bench(c.corpus, base, cells);
  std::optional<specex::L1Probe> probe;
  if (!skip_l1) {
    std::optional<std::chrono::milliseconds> inject;
    if (inject_ms > 0) inject = std::chrono::milliseconds(inject_ms);
    probe = specex::probe_l1(c.corpus, base, stride, inject);
  }
  std::cout << specex::format_bench_table(rows);
  if (probe) {
    std::printf("\nL1 sandboxes      count %zu  p50 %.2f ms  p95 %.2f ms  timed_out %zu\n", probe->sandbox_latency.count,
                probe->sandbox_latency.p50, probe->sandbox_latency.p95, probe->timed_out);
    std::printf("L1 drop targets   count %zu  p50 %.3f ms  p95 %.3f ms\n", probe->drop_target_latency.count,
                probe->drop_target_latency.p50, probe->drop_target_latency.p95);
    if (probe->injected_total > 0) {
      std::printf("injected %d ms    timed_out %zu/%zu  ranked %s\n", inject_ms, probe->injected_timed_out,
                  probe->injected_total, probe->injected_ranked ? "yes" : "no");
    }
  }
  if (!c.out.empty()) write_text(c.out, specex::bench_json(rows, probe).dump(2) + "\n");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Speculative execution for interactive topic modelling"};
  app.require_subcommand(1);
  Common c;

  auto add_common = [&](CLI::App* sub, bool corpus_required) {
    auto* opt = sub->add_option("--corpus", c.corpus, "Corpus directory or .jsonl file");
    if (corpus_required) opt->required();
    sub->add_option("--config", c.config, "JSON configuration file");
    sub->add_option("--seed", c.seed, "Session seed");
    sub->add_option("--trigger", c.trigger, "metric | every-buffer | off")
        ->check(CLI::IsMember({"metric", "every-buffer", "off"}));
    sub->add_option("--out", c.out, "Results file");
    sub->add_option("--workers", c.workers, "Worker threads (0 runs sandboxes inline)");
  };

  auto* run = app.add_subcommand("run", "Run a corpus headless with an automatic policy");
  add_common(run, true);
  run->add_option("--policy", c.policy, "none | top1 | random:P | reject");
  run->add_option("--log", c.log, "Provenance log (JSON lines)");

  std::string log_in;
  auto* rep = app.add_subcommand("replay", "Verify a provenance log by re-executing it");
  rep->add_option("log", log_in, "Provenance log")->required();

  std::string ns = "7";
  std::string bs = "5,10";
  std::string policies = "reject";
  std::size_t stride = 10;
  int inject_ms = 0;
  bool skip_l1 = false;
  auto* ben = app.add_subcommand("bench", "Sandbox counts and latencies over an (n, b, policy) matrix");
  add_common(ben, true);
  ben->add_option("--n", ns, "Comma-separated strategy counts");
  ben->add_option("--b", bs, "Comma-separated buffer sizes");
  ben->add_option("--policies", policies, "Comma-separated policies");
  ben->add_option("--l1-stride", stride, "Inserts between L1 probes");
  ben->add_option("--inject-delay-ms", inject_ms, "Add a delayed strategy to every L1 probe batch");
  ben->add_flag("--skip-l1", skip_l1, "Skip the L1 probe");

  std::string host = "127.0.0.1";
  int port = 8080;
  std::string static_dir;
  std::string log_dir;
  bool multi = false;
  auto* srv = app.add_subcommand("serve", "Serve sessions over HTTP");
  add_common(srv, false);
  srv->add_option("--host", host);
  srv->add_option("--port", port);
  srv->add_option("--static", static_dir, "Directory of static client assets");
  srv->add_option("--log-dir", log_dir, "Write one provenance log per session");
  srv->add_flag("--multi-session", multi);

  specex::SynthOptions synth;
  std::string synth_out;
  auto* syn = app.add_subcommand("synth", "Write a synthetic labelled corpus as JSON lines");
  syn->add_option("--out", synth_out, "Output .jsonl")->required();
  syn->add_option("--groups", synth.groups);
  syn->add_option("--docs-per-group", synth.docs_per_group);
  syn->add_option("--seed", synth.seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kUsage;
  }

  try {
    if (*run) return cmd_run(c);
    if (*rep) return cmd_replay(log_in);
    if (*ben) return cmd_bench(c, ns, bs, policies, stride, inject_ms, skip_l1);
    if (*syn) {
      specex::write_jsonl(synth_out, specex::synthesize_corpus(synth));
      std::cout << "wrote " << synth.groups * synth.docs_per_group << " documents to " << synth_out << "\n";
      return 0;
    }
    if (*srv) {
      specex::ServerOptions o;
      o.host = host;
      o.port = port;
      o.multi_session = multi;
      o.defaults = session_config(c);
      if (!static_dir.empty()) o.static_dir = static_dir;
      if (!log_dir.empty()) o.log_dir = log_dir;
      specex::Server server(o);
      if (!c.corpus.empty()) std::cout << "session " << server.create_session(c.corpus, nullptr) << "\n";
      std::cout << "listening on " << host << ":" << port << std::endl;
      server.run();
      return 0;
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  }
  return kUsage;
}
