#pragma once
// Shared driver for the acceptance binaries: one PASS/FAIL line per criterion.
// Exit status is 0 once every criterion has been evaluated; --strict also
// requires every criterion to pass. A criterion that throws exits 2.
#include <chrono>
#include <cstdio>
#include <cstring>
#include <exception>
#include <functional>
#include <set>
#include <string>
#include <vector>

namespace fourdfold::acceptance {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int id;
  std::string name;
  double limit_seconds;  // wall-clock budget from the criterion text; <= 0 when none is stated
  std::function<Outcome()> run;
};

struct Options {
  std::string work = "acceptance_work";
  bool strict = false;
  std::set<int> only;
};

inline Options parse_options(int argc, char** argv) {
  Options o;
  for (int k = 1; k < argc; ++k) {
    if (!std::strcmp(argv[k], "--work") && k + 1 < argc) {
      o.work = argv[++k];
    } else if (!std::strcmp(argv[k], "--strict")) {
      o.strict = true;
    } else if (!std::strcmp(argv[k], "--only") && k + 1 < argc) {
      o.only.insert(std::atoi(argv[++k]));
    } else {
      std::fprintf(stderr, "usage: %s [--work DIR] [--strict] [--only N]...\n", argv[0]);
      std::exit(1);
    }
  }
  return o;
}

inline std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

inline int run_all(const std::vector<Criterion>& criteria, const Options& opts) {
  int failed = 0, errors = 0;
  for (const auto& c : criteria) {
    if (!opts.only.empty() && !opts.only.count(c.id)) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome out;
    bool error = false;
    try {
      out = c.run();
    } catch (const std::exception& e) {
      out = {false, std::string("error: ") + e.what()};
      error = true;
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool in_time = c.limit_seconds <= 0.0 || secs <= c.limit_seconds;
    const bool pass = out.pass && in_time;
    const std::string limit = c.limit_seconds > 0.0 ? fmt("limit %.0f s", c.limit_seconds) : "no limit stated";
    std::printf("criterion %2d %s  %s: %s; %.1f s (%s)%s\n", c.id, pass ? "PASS" : "FAIL", c.name.c_str(),
                out.detail.c_str(), secs, limit.c_str(), in_time ? "" : " OVER BUDGET");
    std::fflush(stdout);
    failed += pass ? 0 : 1;
    errors += error ? 1 : 0;
  }
  if (errors) return 2;
  return opts.strict && failed ? 1 : 0;
}


}  // namespace fourdfold::acceptance
