#include <chrono>
#include <cstdio>
#include <iostream>
#include <memory>

#include <CLI11.hpp>

#include "spyro/spyro.hpp"

using namespace spyro;

namespace {

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string belief;
  std::optional<int> recursion;
  bool paired = false;
};

RunConfig load(const Options& o) {
  RunConfig c = o.config.empty() ? RunConfig{} : load_config(o.config);
  if (o.seed) {
    c.seed = *o.seed;
    c.training.seed = *o.seed;
  }
  return c;
}

template <PyramidSpace Space>
Space make_space(const RunConfig& c) {
  if constexpr (std::is_same_v<Space, Se3Pyramid>)
    return make_se3_space(c);
  else
    return make_so3_space(c);
}

template <PyramidSpace Space>
typename Space::Element true_pose(const RunConfig& c) {
  const UnitQuaternion q = to_rotation(c.inference.true_rotation);
  if constexpr (std::is_same_v<Space, Se3Pyramid>)
    return Pose{q, to_eigen(c.inference.true_position)};
  else
    return q;
}

/// The configured model on one space: owns the head and pose scorer.
template <PyramidSpace Space>
struct Model {
  using Element = typename Space::Element;
  AnalyticPoseTarget target;
  std::unique_ptr<KeypointHead> head;
  std::unique_ptr<PoseScorer<Element>> pose;
  std::unique_ptr<CellScorer<Space>> cells;

  Model(const RunConfig& c, const Space& space, int n_levels) : target(make_target(c)) {
    const std::string& type = c.model.type;
    if (type == "uniform") {
      pose = std::make_unique<UniformScorer<Element>>();
    } else if (type == "analytic") {
      if constexpr (std::is_same_v<Space, Se3Pyramid>)
        if (!target.has_position()) throw ConfigError("an SE(3) analytic model needs position_std > 0 on every mode");
      pose = std::make_unique<AnalyticScorer<Element>>(target);
    } else {
      head = std::make_unique<KeypointHead>(make_head(c, target, n_levels));
      pose = std::make_unique<KeypointScorer<Element>>(*head, to_eigen(c.model.translation));
    }
    if (type == "analytic" && c.model.quadrature_refine > 0)
      cells = std::make_unique<QuadratureScorer<Space>>(space, *pose, c.model.quadrature_refine);
    else
      cells = std::make_unique<CenterScorer<Space>>(space, *pose);
  }
};

std::string pick(const std::string& flag, const std::string& fallback) { return flag.empty() ? fallback : flag; }

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void grid_stats(const RunConfig& c) {
  const So3Pyramid so3;
  const Se3Pyramid se3 = make_se3_space(c);
  std::printf("%-5s %3s %22s %24s\n", "space", "r", "cells", "cell_volume");
  for (int r = 0; r <= 6; ++r)
    std::printf("%-5s %3d %22llu %24.17g\n", "so3", r, static_cast<unsigned long long>(So3Pyramid::level_size(r)),
                so3.cell_volume(r));
  for (int r = 0; r <= 5; ++r)
    std::printf("%-5s %3d %22llu %24.17g\n", "se3", r, static_cast<unsigned long long>(Se3Pyramid::level_size(r)),
                se3.cell_volume(r));
  std::printf("so3 total_volume %.17g\nse3 total_volume %.17g\n", so3.total_volume(), se3.total_volume());
}

template <PyramidSpace Space>
void infer(const RunConfig& c, const Options& o) {
  const Space space = make_space<Space>(c);
  const Model<Space> model(c, space, c.inference.depth + 1);
  require_depth(*model.cells, c.inference.depth);
  const SparseBelief belief = sparse_infer(*model.cells, c.inference.k, c.inference.depth);
  const std::string path = pick(o.out, c.io.belief);
  const auto leaves = belief.leaves();
  write_belief(path, leaves);
  std::printf("belief %s\n", path.c_str());
  std::printf("leaves %zu\n", leaves.size());
  std::printf("evaluations %llu\n", static_cast<unsigned long long>(belief.evaluations()));
  std::printf("eval_count_formula %llu\n",
              static_cast<unsigned long long>(eval_count(c.inference.k, c.inference.depth, Space::kLevel0Size, Space::kBranching)));
  std::printf("entropy %.17g\n", belief_entropy(belief, space));
  if (c.inference.has_true_pose) {
    const auto x = true_pose<Space>(c);
    std::printf("true_pose_ll %.17g\n", continuous_likelihood(belief, space, x));
  }
}

template <PyramidSpace Space>
void train_cmd(const RunConfig& c, const Options& o) {
  const Space base = make_space<Space>(c);
  const int depth = c.training.depth;
  const AnalyticPoseTarget target = make_target(c);
  auto run = [&](bool importance, const std::string& weights_path, const std::string& report_path) {
    KeypointHead head = make_head(c, target, depth + 1);
    TrainConfig t = c.training;
    t.importance_sampling = importance;
    const TrainReport report = train(head, target, base, t, to_eigen(c.model.translation));
    save_weights(weights_path, head.all_weights());
    report.write_csv(report_path);
    std::printf("%s weights %s report %s skipped %zu/%zu\n", importance ? "is" : "uniform", weights_path.c_str(),
                report_path.c_str(), report.skipped_outside, report.samples);
    const EvalResult& e = report.final_eval();
    for (int r = 0; r <= depth; ++r) std::printf("  r%d ll %.6f\n", r, e.level_ll[r]);
    std::printf("  continuous_ll %.6f\n", e.continuous_ll);
  };
  const std::string weights = pick(o.out, c.io.weights);
  if (!o.paired) {
    run(c.training.importance_sampling, weights, c.io.report);
    return;
  }
  auto suffixed = [](const std::string& p, const std::string& tag) {
    const auto dot = p.find_last_of('.');
    return dot == std::string::npos ? p + "." + tag : p.substr(0, dot) + "." + tag + p.substr(dot);
  };
  run(true, suffixed(weights, "is"), suffixed(c.io.report, "is"));
  run(false, suffixed(weights, "uniform"), suffixed(c.io.report, "uniform"));
}

template <PyramidSpace Space>
void plot(const RunConfig& c, const Options& o) {
  const auto leaves = read_belief(pick(o.belief, c.io.belief));
  const int recursion = o.recursion.value_or(c.plot.recursion);
  const So3Marginal m = marginal_so3<Space>(std::span<const BeliefLeaf>(leaves), recursion);
  MollweideOptions opt;
  opt.width = c.plot.width;
  opt.height = c.plot.height;
  opt.grayscale = c.plot.grayscale;
  opt.axis = to_eigen(c.plot.axis);
  if (c.inference.has_true_pose) opt.truth = to_rotation(c.inference.true_rotation);
  const MollweideImage img = render_mollweide(m, opt);
  const std::string path = pick(o.out, c.io.image);
  img.write_ppm(path, opt.grayscale);
  std::printf("image %s\nrecursion %d\npainted_mass %.17g\n", path.c_str(), recursion, img.painted_mass());
}

template <PyramidSpace Space>
void bench(const RunConfig& c) {
  const Space space = make_space<Space>(c);
  const int depth = c.inference.depth;
  const Model<Space> model(c, space, depth + 1);
  require_depth(*model.cells, depth);
  const auto t0 = std::chrono::steady_clock::now();
  const SparseBelief belief = sparse_infer(*model.cells, c.inference.k, depth);
  const double sparse_s = seconds_since(t0);
  std::printf("%3s %20s %20s %12s %12s\n", "r", "sparse_evals", "dense_evals", "ratio", "dense_s");
  for (int r = 0; r <= depth; ++r) {
    const auto sparse = eval_count(c.inference.k, r, Space::kLevel0Size, Space::kBranching);
    const auto dense = Space::level_size(r);
    std::string dense_time = "-";
    if (r <= 3 && dense <= 2'500'000) {
      const auto t1 = std::chrono::steady_clock::now();
      (void)dense_level(*model.cells, r);
      dense_time = std::to_string(seconds_since(t1));
    }
    std::printf("%3d %20llu %20llu %12.2f %12s\n", r, static_cast<unsigned long long>(sparse),
                static_cast<unsigned long long>(dense), static_cast<double>(dense) / static_cast<double>(sparse),
                dense_time.c_str());
  }
  std::printf("instrumented_evals %llu\nsparse_s %.6f\n", static_cast<unsigned long long>(belief.evaluations()), sparse_s);
}

template <class F>
int guarded(F&& f) {
  try {
    f();
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}

template <template <class> class Cmd>
void dispatch(const RunConfig& c, const Options& o) {
  if (c.se3())
    Cmd<Se3Pyramid>{}(c, o);
  else
    Cmd<So3Pyramid>{}(c, o);
}

template <class S> struct InferCmd { void operator()(const RunConfig& c, const Options& o) const { infer<S>(c, o); } };
template <class S> struct TrainCmd { void operator()(const RunConfig& c, const Options& o) const { train_cmd<S>(c, o); } };
template <class S> struct PlotCmd { void operator()(const RunConfig& c, const Options& o) const { plot<S>(c, o); } };
template <class S> struct BenchCmd { void operator()(const RunConfig& c, const Options&) const { bench<S>(c); } };

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SE(3) and SO(3) pyramid pose distributions"};
  app.require_subcommand(1);
  Options o;
  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "run configuration (YAML)");
    sub->add_option("--seed", o.seed, "override the run seed");
    sub->add_option("--out", o.out, "output path");
  };
  CLI::App* grid = app.add_subcommand("grid-stats", "cell counts and volumes per recursion");
  CLI::App* inf = app.add_subcommand("infer", "sparse inference; writes a belief file");
  CLI::App* tr = app.add_subcommand("train", "train keypoint heads; writes weights and a report");
  CLI::App* pl = app.add_subcommand("plot", "Mollweide image of a belief's rotation marginal");
  CLI::App* be = app.add_subcommand("bench", "sparse vs dense evaluation counts and timings");
  for (CLI::App* s : {grid, inf, tr, pl, be}) common(s);
  tr->add_flag("--paired", o.paired, "train with importance sampling and with uniform negatives");
  pl->add_option("--belief", o.belief, "belief file (default io.belief)");
  pl->add_option("--recursion", o.recursion, "marginal recursion (default plot.recursion)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  return guarded([&] {
    const RunConfig c = load(o);
    if (*grid) grid_stats(c);
    else if (*inf) dispatch<InferCmd>(c, o);
    else if (*tr) dispatch<TrainCmd>(c, o);
    else if (*pl) dispatch<PlotCmd>(c, o);
    else if (*be) dispatch<BenchCmd>(c, o);
  });
}
