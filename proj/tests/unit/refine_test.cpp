#include <cmath>
#include <set>

#include "doctest.h"
#include "support/gradcheck.hpp"
#include "support/reference.hpp"
#include "traj/commands.hpp"
#include "traj/refine.hpp"

using namespace traj;

namespace {

RunConfig small_config() {
  RunConfig cfg = default_config();
  cfg.generator.n_scenarios = 4;
  cfg.seed = 61;
  return cfg;
}

Mat straight_trajectory(int t_f, double step) {
  Mat m(t_f, 2);
  for (int i = 0; i < t_f; ++i) {
    m.at(i, 0) = step * (i + 1);
    m.at(i, 1) = 0.0;
  }
  return m;
}

// Initial refinement state from a backbone pass.
struct Setup {
  Scenario local;
  Mat gt;
  RefineVars state;
};

Setup make_state(Tape& t, const RunConfig& cfg, const ModelBundle& models,
                 const ParameterStore& store, const Scenario& s) {
  Setup setup;
  setup.local = scenario_in_target_frame(s);
  const BackboneVars bb = models.backbone.forward(t, store, setup.local, false);
  setup.state.traj = bb.traj;
  setup.state.emb = models.refine.compress(t, store, bb.emb);
  setup.state.prob = bb.prob;
  setup.state.iteration = 0;
  return setup;
}

}  // namespace

TEST_CASE("compressor: zero weights give zero, output width is 64") {
  RunConfig cfg = small_config();
  ParameterStore store = init_store(cfg);
  const RefineModel refine(cfg.refine, cfg.generator.t_f);

  Tape t;
  Rng rng(1);
  Mat e(1, cfg.refine.d_backbone);
  for (double& v : e.d) v = rng.normal();

  const auto out = refine.compress(t, store, {t.input(e)});
  CHECK(t.val(out[0]).cols == 64);

  for (auto& [name, m] : store.params_mutable()) {
    if (name.find("refine/compress") == 0) m.fill(0.0);
  }
  Tape t2;
  const auto zero_out = refine.compress(t2, store, {t2.input(e)});
  for (double v : t2.val(zero_out[0]).d) CHECK(v == 0.0);

  Tape t3;
  CHECK_THROWS_WITH_AS(refine.compress(t3, store, {t3.input(Mat(1, 63))}),
                       doctest::Contains("width"), std::invalid_argument);
}

TEST_CASE("compressor gradients match finite differences") {
  RunConfig cfg = small_config();
  ParameterStore store;
  Rng rng(2);
  init_mlp2(store, rng, "refine/compress", cfg.refine.d_backbone, 64, 64);
  const RefineModel refine(cfg.refine, cfg.generator.t_f);
  Rng data_rng(3);
  Mat e(1, cfg.refine.d_backbone);
  for (double& v : e.d) v = data_rng.normal();
  auto build = [&](Tape& t, const ParameterStore& s) {
    const auto out = refine.compress(t, s, {t.input(e)});
    Mat w(1, 64);
    Rng wr(4);
    for (double& v : w.d) v = wr.normal();
    return t.sum_all(t.mul(out[0], t.input(std::move(w))));
  };
  CHECK(traj::testing::finite_difference_check(store, build, 10, 55).max_rel_err < 1e-4);
}

TEST_CASE("select_anchors boundaries") {
  const Mat traj30 = straight_trajectory(30, 1.0);
  const auto a2 = select_anchors(traj30, 2);
  REQUIRE(a2.size() == 2);
  CHECK(a2[0].end_step == 15);
  CHECK(a2[1].end_step == 30);
  CHECK(a2[0].start_step == 0);
  CHECK(a2[1].start_step == 15);

  const auto a1 = select_anchors(traj30, 1);
  REQUIRE(a1.size() == 1);
  CHECK(a1[0].end_step == 30);

  const Mat traj10 = straight_trajectory(10, 0.5);
  const auto a4 = select_anchors(traj10, 4);
  REQUIRE(a4.size() == 4);
  CHECK(a4[0].end_step == 2);
  CHECK(a4[1].end_step == 5);
  CHECK(a4[2].end_step == 7);
  CHECK(a4[3].end_step == 10);
}

TEST_CASE("anchor pose and speed for a straight constant-speed trajectory") {
  const Mat traj = straight_trajectory(30, 0.8);  // 8 m/s at dt=0.1
  for (const Anchor& a : select_anchors(traj, 2)) {
    CHECK(a.pose.heading == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(a.speed == doctest::Approx(8.0).epsilon(1e-9));
    CHECK(a.pose.x == doctest::Approx(0.8 * a.end_step).epsilon(1e-12));
  }
}

TEST_CASE("degenerate trajectory gives zero heading and speed, no error") {
  Mat traj(12, 2);  // all points coincident at the origin
  const auto anchors = select_anchors(traj, 3);
  for (const Anchor& a : anchors) {
    CHECK(a.pose.heading == 0.0);
    CHECK(a.speed == 0.0);
  }
}

TEST_CASE("segments exactly tile 1..T_f for random N") {
  Rng rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    const int t_f = static_cast<int>(rng.uniform_int(2, 80));
    const int n = static_cast<int>(rng.uniform_int(1, t_f));
    const auto anchors = select_anchors(straight_trajectory(t_f, 0.3), n);
    int expected_start = 0;
    for (const Anchor& a : anchors) {
      CHECK(a.start_step == expected_start);
      CHECK(a.end_step > a.start_step);
      expected_start = a.end_step;
    }
    CHECK(expected_start == t_f);
  }
}

TEST_CASE("retrieval radius formula, clamping, and monotonicity") {
  RefineConfig cfg;  // beta=0.8, bounds [2,10]
  CHECK(retrieval_radius(1, 10.0, cfg) == doctest::Approx(8.0).epsilon(1e-12));
  CHECK(retrieval_radius(2, 10.0, cfg) == doctest::Approx(4.0).epsilon(1e-12));
  CHECK(retrieval_radius(3, 1.0, cfg) == doctest::Approx(2.0).epsilon(1e-12));  // clamped up
  CHECK(retrieval_radius(1, 100.0, cfg) == doctest::Approx(10.0).epsilon(1e-12));

  Rng rng(10);
  for (int trial = 0; trial < 100; ++trial) {
    const double v = rng.uniform(0.0, 40.0);
    double prev = retrieval_radius(1, v, cfg);
    for (int i = 2; i <= 8; ++i) {
      const double r = retrieval_radius(i, v, cfg);
      CHECK(r <= prev + 1e-15);
      CHECK(r >= cfg.r_min);
      CHECK(r <= cfg.r_max);
      prev = r;
    }
  }

  CHECK_THROWS_AS(retrieval_radius(0, 1.0, cfg), std::invalid_argument);
  CHECK_THROWS_AS(retrieval_radius(1, -1.0, cfg), std::invalid_argument);
}

TEST_CASE("linear decay interpolates the factor; fixed mode ignores clamping") {
  RefineConfig cfg;
  cfg.radius_mode = RadiusMode::kAdaptiveLinear;
  cfg.r_min = 0.01;
  cfg.r_max = 100.0;
  const int total = 5;
  CHECK(retrieval_radius(1, 10.0, cfg, total) == doctest::Approx(8.0).epsilon(1e-12));
  CHECK(retrieval_radius(total, 10.0, cfg, total) ==
        doctest::Approx(0.8 * std::pow(0.5, total - 1) * 10.0).epsilon(1e-12));
  // Midpoint is the even interpolation.
  const double f_last = 0.8 * std::pow(0.5, total - 1);
  const double expect = (0.8 + (3 - 1) * (f_last - 0.8) / (total - 1)) * 10.0;
  CHECK(retrieval_radius(3, 10.0, cfg, total) == doctest::Approx(expect).epsilon(1e-12));

  cfg.radius_mode = RadiusMode::kFixed;
  cfg.fixed_radius = 50.0;
  CHECK(retrieval_radius(1, 3.0, cfg) == 50.0);
  CHECK(retrieval_radius(4, 0.0, cfg) == 50.0);
}

TEST_CASE("retrieval threshold semantics") {
  Scenario s;
  s.t_h = 2;
  s.t_f = 2;
  s.id = "manual";
  s.target.history = {{-0.1, 0}, {0, 0}};
  s.target.future = {{1, 0}, {2, 0}};
  s.map.push_back({{{5.0, 0.0}, {9.0, 0.0}}, 0});

  const SceneIndex index(s, 10.0);
  Anchor a;
  a.pose = make_pose(0, 0, 0);
  a.end_step = 2;

  const auto elems = retrieve_context(index, a, 8.0, 128);
  REQUIRE(elems.size() == 1);  // 5 m included, 9 m excluded
  CHECK(elems[0].dist == doctest::Approx(5.0).epsilon(1e-12));
  CHECK(elems[0].position.x == doctest::Approx(5.0).epsilon(1e-9));
  CHECK(std::fabs(elems[0].position.y) < 1e-12);
  CHECK(std::sqrt(elems[0].position.x * elems[0].position.x +
                  elems[0].position.y * elems[0].position.y) ==
        doctest::Approx(elems[0].dist).epsilon(1e-9));
}

TEST_CASE("anchor coincident with a map point") {
  Scenario s;
  s.t_h = 2;
  s.t_f = 1;
  s.id = "coincident";
  s.target.history = {{-1, 0}, {0, 0}};
  s.target.future = {{1, 0}};
  s.map.push_back({{{3.0, 4.0}, {6.0, 8.0}}, 0});

  const SceneIndex index(s, 10.0);
  Anchor a;
  a.pose = make_pose(3.0, 4.0, 0.7);
  a.end_step = 1;
  const auto elems = retrieve_context(index, a, 2.0, 128);
  REQUIRE(!elems.empty());
  CHECK(elems[0].dist == 0.0);
  CHECK(elems[0].position.x == 0.0);
  CHECK(elems[0].position.y == 0.0);
}

TEST_CASE("empty retrieval falls back to the single nearest map point") {
  Scenario s;
  s.t_h = 2;
  s.t_f = 1;
  s.id = "fallback";
  s.target.history = {{-1, 0}, {0, 0}};
  s.target.future = {{1, 0}};
  s.map.push_back({{{100.0, 0.0}, {104.0, 0.0}}, 0});
  s.others.push_back({{{90.0, 0.0}, {90.5, 0.0}}, {}, kVehicle});

  const SceneIndex index(s, 10.0);
  Anchor a;
  a.pose = make_pose(0, 0, 0);
  a.end_step = 1;
  const auto elems = retrieve_context(index, a, 1.0, 128);
  REQUIRE(elems.size() == 1);
  CHECK(elems[0].kind == 0);  // map point, not the closer agent waypoint
  CHECK(elems[0].dist == doctest::Approx(100.0).epsilon(1e-12));
}

TEST_CASE("grid retrieval equals the naive scan on random scenarios") {
  RunConfig cfg = small_config();
  cfg.generator.n_scenarios = 30;
  Rng rng(12);
  for (const Scenario& s : generate(cfg.generator)) {
    const Scenario local = scenario_in_target_frame(s);
    const SceneIndex index(local, cfg.refine.r_max);
    for (int trial = 0; trial < 4; ++trial) {
      Anchor a;
      a.pose = make_pose(rng.uniform(-30, 30), rng.uniform(-15, 15), 0);
      a.end_step = 1;
      for (double radius : {2.0, 6.5, 10.0}) {
        const int cap = trial == 0 ? 8 : 128;  // exercise the nearest-first cap too
        const auto got = retrieve_context(index, a, radius, cap);
        const auto want = reference::naive_retrieve(local, {a.pose.x, a.pose.y}, radius, cap);
        REQUIRE(got.size() == want.size());
        std::set<reference::RetrievedId> got_ids, want_ids(want.begin(), want.end());
        for (const auto& e : got) got_ids.insert({e.kind, e.source, e.point});
        CHECK(got_ids == want_ids);
      }
    }
  }
}

TEST_CASE("context encoding: zero weights, permutation, frame sensitivity") {
  RunConfig cfg = small_config();
  ParameterStore store = init_store(cfg);
  const ModelBundle models = make_models(cfg);
  const Scenario s = generate_scenario(cfg.generator, 1);
  const Scenario local = scenario_in_target_frame(s);
  const SceneIndex scene(local, cfg.refine.r_max);

  // Zero encoder weights -> zero embeddings: run a segment with zeroed
  // encoder+fusion parameters and check the attended output is unchanged
  // (attention over all-zero keys/values contributes only bias terms).
  ParameterStore zeroed = init_store(cfg);
  for (auto& [name, m] : zeroed.params_mutable()) {
    if (name.find("refine/enc") == 0 || name.find("refine/fuse") == 0) m.fill(0.0);
  }

  Tape t;
  auto setup = make_state(t, cfg, models, zeroed, s);
  const auto anchors = select_anchors(t.val(setup.state.traj[0]), models.refine.n_anchors());
  const auto seg = models.refine.refine_segment(t, zeroed, scene, setup.state.traj[0],
                                                setup.state.emb[0], anchors[0], 8.0, false);
  CHECK(t.val(seg.emb).cols == 64);

  // Permuting input elements permutes encoder output rows identically and
  // frame changes alter the embeddings: these operate on the encoder
  // directly through a small synthetic batch.
  ParameterStore enc = init_store(cfg);
  Rng rng(5);
  Mat pos(3, 2), sem(3, 1), dist(3, 1);
  for (double& v : pos.d) v = rng.uniform(-5, 5);
  for (int i = 0; i < 3; ++i) {
    sem.d[static_cast<size_t>(i)] = i % 2;
    dist.d[static_cast<size_t>(i)] = std::sqrt(pos.at(i, 0) * pos.at(i, 0) +
                                               pos.at(i, 1) * pos.at(i, 1));
  }
  auto encode = [&](const Mat& p, const Mat& se, const Mat& di) {
    Tape tt;
    VarId z = mlp2(tt, enc, "refine/fuse",
                   tt.add(tt.add(mlp2(tt, enc, "refine/enc.pos", tt.input(p)),
                                 mlp2(tt, enc, "refine/enc.sem", tt.input(se))),
                          mlp2(tt, enc, "refine/enc.dist", tt.input(di))));
    return tt.val(z);
  };
  const Mat z = encode(pos, sem, dist);

  Mat pos_p(3, 2), sem_p(3, 1), dist_p(3, 1);
  const int perm[3] = {2, 0, 1};
  for (int i = 0; i < 3; ++i) {
    pos_p.at(i, 0) = pos.at(perm[i], 0);
    pos_p.at(i, 1) = pos.at(perm[i], 1);
    sem_p.d[static_cast<size_t>(i)] = sem.d[static_cast<size_t>(perm[i])];
    dist_p.d[static_cast<size_t>(i)] = dist.d[static_cast<size_t>(perm[i])];
  }
  const Mat z_p = encode(pos_p, sem_p, dist_p);
  for (int i = 0; i < 3; ++i) {
    for (int c = 0; c < 64; ++c) CHECK(z_p.at(i, c) == z.at(perm[i], c));
  }

  // Rotating the frame (same world points, rotated anchor) changes rows.
  Mat pos_rot(3, 2);
  const double c = std::cos(0.9), si = std::sin(0.9);
  for (int i = 0; i < 3; ++i) {
    pos_rot.at(i, 0) = c * pos.at(i, 0) + si * pos.at(i, 1);
    pos_rot.at(i, 1) = -si * pos.at(i, 0) + c * pos.at(i, 1);
  }
  const Mat z_rot = encode(pos_rot, sem, dist);
  bool any_diff = false;
  for (int i = 0; i < z.size(); ++i) {
    if (z.d[static_cast<size_t>(i)] != z_rot.d[static_cast<size_t>(i)]) any_diff = true;
  }
  CHECK(any_diff);
}

TEST_CASE("zero offset heads leave the trajectory bitwise unchanged") {
  RunConfig cfg = small_config();
  ParameterStore store = init_store(cfg);
  for (auto& [name, m] : store.params_mutable()) {
    if (name.find("refine/offset") == 0) m.fill(0.0);
  }
  const ModelBundle models = make_models(cfg);
  const Scenario s = generate_scenario(cfg.generator, 2);
  const Scenario local = scenario_in_target_frame(s);
  const SceneIndex scene(local, cfg.refine.r_max);

  Tape t;
  auto setup = make_state(t, cfg, models, store, s);
  const std::vector<Mat> before = [&] {
    std::vector<Mat> v;
    for (VarId id : setup.state.traj) v.push_back(t.val(id));
    return v;
  }();

  RefineVars state = setup.state;
  for (int i = 1; i <= 3; ++i) {
    state = models.refine.refine_iteration(t, store, scene, state, i, 3, false);
  }
  for (size_t k = 0; k < state.traj.size(); ++k) {
    CHECK(t.val(state.traj[k]).d == before[k].d);
  }
  // Embeddings still updated.
  bool emb_changed = false;
  for (size_t k = 0; k < state.emb.size(); ++k) {
    if (t.val(state.emb[k]).d != t.val(setup.state.emb[k]).d) emb_changed = true;
  }
  CHECK(emb_changed);
}

TEST_CASE("refine_segment only changes waypoints inside its segment") {
  RunConfig cfg = small_config();
  ParameterStore store = init_store(cfg);
  traj::testing::randomize_params(store, 71, 0.2);
  const ModelBundle models = make_models(cfg);
  const Scenario s = generate_scenario(cfg.generator, 3);
  const Scenario local = scenario_in_target_frame(s);
  const SceneIndex scene(local, cfg.refine.r_max);

  Tape t;
  auto setup = make_state(t, cfg, models, store, s);
  const Mat before = t.val(setup.state.traj[0]);
  const auto anchors = select_anchors(before, models.refine.n_anchors());
  REQUIRE(anchors.size() >= 2);
  const Anchor& a = anchors[0];
  const auto seg = models.refine.refine_segment(t, store, scene, setup.state.traj[0],
                                                setup.state.emb[0], a, 6.0, false);
  const Mat after = t.val(seg.traj);
  bool segment_changed = false;
  for (int r = 0; r < before.rows; ++r) {
    const bool inside = r >= a.start_step && r < a.end_step;
    const bool same = after.at(r, 0) == before.at(r, 0) && after.at(r, 1) == before.at(r, 1);
    if (inside) {
      segment_changed = segment_changed || !same;
    } else {
      CHECK(same);
    }
  }
  CHECK(segment_changed);
  CHECK(t.val(seg.segment_scales).rows == a.end_step - a.start_step);
  for (double v : t.val(seg.segment_scales).d) CHECK(v >= 1e-3);
}

TEST_CASE("probabilities stay a simplex across iterations") {
  RunConfig cfg = small_config();
  ParameterStore store = init_store(cfg);
  const ModelBundle models = make_models(cfg);
  const Scenario s = generate_scenario(cfg.generator, 0);
  const SceneIndex scene(scenario_in_target_frame(s), cfg.refine.r_max);

  Tape t;
  auto setup = make_state(t, cfg, models, store, s);
  RefineVars state = setup.state;
  for (int i = 1; i <= 3; ++i) {
    state = models.refine.refine_iteration(t, store, scene, state, i, 3, false);
    double sum = 0.0;
    for (double p : t.val(state.prob).d) {
      CHECK(p >= 0.0);
      sum += p;
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("full refinement iteration gradients match finite differences") {
  RunConfig cfg = small_config();
  cfg.refine.dropout = 0.0;
  cfg.backbone.dropout = 0.0;
  ParameterStore store = init_store(cfg);
  const ModelBundle models = make_models(cfg);
  const Scenario s = generate_scenario(cfg.generator, 1);
  const Scenario local = scenario_in_target_frame(s);
  const SceneIndex scene(local, cfg.refine.r_max);

  auto build = [&](Tape& t, const ParameterStore& st) {
    const BackboneVars bb = models.backbone.forward(t, st, local, false);
    RefineVars state;
    state.traj = bb.traj;
    state.emb = models.refine.compress(t, st, bb.emb);
    state.prob = bb.prob;
    state.iteration = 0;
    state = models.refine.refine_iteration(t, st, scene, state, 1, 2, false);
    state = models.refine.refine_iteration(t, st, scene, state, 2, 2, false);
    VarId loss = t.scalar_input(0.0);
    Rng rng(8);
    for (VarId id : state.traj) {
      Mat w(t.val(id).rows, t.val(id).cols);
      for (double& v : w.d) v = rng.normal();
      loss = t.add(loss, t.sum_all(t.mul(id, t.input(std::move(w)))));
    }
    return loss;
  };
  CHECK(traj::testing::finite_difference_check(store, build, 10, 313).max_rel_err < 1e-4);
}

TEST_CASE("pipeline equivariance under rigid motions") {
  RunConfig cfg = small_config();
  cfg.generator.n_scenarios = 10;
  ParameterStore store = init_store(cfg);
  const ModelBundle models = make_models(cfg);
  Rng rng(313);
  for (const Scenario& s : generate(cfg.generator)) {
    const Pose2 motion = make_pose(rng.uniform(-50, 50), rng.uniform(-50, 50),
                                   rng.uniform(-M_PI, M_PI));
    const Scenario moved = apply_rigid(s, motion);

    auto run = [&](const Scenario& sc) {
      Tape t(false);
      const Scenario local = scenario_in_target_frame(sc);
      const SceneIndex scene(local, cfg.refine.r_max);
      const BackboneVars bb = models.backbone.forward(t, store, local, false);
      RefineVars state;
      state.traj = bb.traj;
      state.emb = models.refine.compress(t, store, bb.emb);
      state.prob = bb.prob;
      state.iteration = 0;
      for (int i = 1; i <= 2; ++i) {
        state = models.refine.refine_iteration(t, store, scene, state, i, 2, false);
      }
      // Map back to world coordinates.
      const Pose2 pose = target_pose(sc);
      std::vector<Mat> world;
      for (VarId id : state.traj) {
        Mat m = t.val(id);
        for (int r = 0; r < m.rows; ++r) {
          const Vec2 w = from_frame(pose, {m.at(r, 0), m.at(r, 1)});
          m.at(r, 0) = w.x;
          m.at(r, 1) = w.y;
        }
        world.push_back(std::move(m));
      }
      return world;
    };

    const auto base = run(s);
    const auto transformed = run(moved);
    for (size_t k = 0; k < base.size(); ++k) {
      for (int r = 0; r < base[k].rows; ++r) {
        const Vec2 expected = from_frame(motion, {base[k].at(r, 0), base[k].at(r, 1)});
        CHECK(std::fabs(transformed[k].at(r, 0) - expected.x) < 1e-6);
        CHECK(std::fabs(transformed[k].at(r, 1) - expected.y) < 1e-6);
      }
    }
  }
}

TEST_CASE("anchors adapt to the horizon") {
  RefineConfig cfg;
  CHECK(anchors_for_horizon(30, cfg) == 2);
  CHECK(anchors_for_horizon(60, cfg) == 4);
  CHECK(anchors_for_horizon(10, cfg) == 1);
  cfg.n_anchors = 3;
  CHECK(anchors_for_horizon(30, cfg) == 3);
}
