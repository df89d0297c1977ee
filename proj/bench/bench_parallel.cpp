// Tiled OpenMP paths against their serial references. Thread count follows
// OMP_NUM_THREADS.

#include "t4d/harness.hpp"
#include "t4d/motionfield.hpp"
#include "t4d/rng.hpp"
#include "t4d/splatter.hpp"

#include <benchmark/benchmark.h>

#include <map>

using namespace t4d;

namespace {

struct Fixture {
    RenderScene scene;
    Camera camera;
    RenderGradIn upstream;
};

const Fixture& fixture(int gaussians, int size) {
    static std::map<std::pair<int, int>, Fixture> cache;
    auto [it, fresh] = cache.try_emplace({gaussians, size});
    if (fresh) {
        SceneSpec spec;
        spec.gaussians = gaussians;
        spec.width = spec.height = size;
        spec.focal = 1.25 * size;
        const SynthScene s = synth_scene(spec);
        it->second.scene = posed_scene(s, 0, nullptr);
        it->second.camera = Camera::look_at(Vec3(3.8, 0.0, 1.4), Vec3::Zero(), Vec3::UnitZ(), spec.focal,
                                            spec.focal, 0.5 * size - 0.5, 0.5 * size - 0.5, size, size);
        it->second.upstream.color = ImagePlane(size, size, it->second.scene.channels, ChannelKind::Feature, 1.0);
    }
    return it->second;
}

void BM_render_tiled(benchmark::State& st) {
    const Fixture& f = fixture(st.range(0), st.range(1));
    for (auto _ : st) benchmark::DoNotOptimize(render(f.scene, f.camera));
}

void BM_render_serial(benchmark::State& st) {
    const Fixture& f = fixture(st.range(0), st.range(1));
    for (auto _ : st) benchmark::DoNotOptimize(render_reference(f.scene, f.camera));
}

void BM_backward_tiled(benchmark::State& st) {
    const Fixture& f = fixture(st.range(0), st.range(1));
    for (auto _ : st) benchmark::DoNotOptimize(render_backward(f.scene, f.camera, f.upstream));
}

void BM_backward_serial(benchmark::State& st) {
    const Fixture& f = fixture(st.range(0), st.range(1));
    for (auto _ : st) benchmark::DoNotOptimize(render_backward_reference(f.scene, f.camera, f.upstream));
}

std::vector<Vec3> points(int n) {
    Rng rng(3);
    std::vector<Vec3> p(n);
    for (Vec3& x : p) x = Vec3(rng.uniform(-0.9, 0.9), rng.uniform(-0.9, 0.9), rng.uniform(-0.9, 0.9));
    return p;
}

HexPlaneField field() {
    BoundingBox box;
    box.min = Vec3::Constant(-1);
    box.max = Vec3::Constant(1);
    return HexPlaneField::initialized(HexPlaneConfig{}, box, 16, 1);
}

void BM_hexplane_batch(benchmark::State& st) {
    const HexPlaneField f = field();
    const auto p = points(st.range(0));
    for (auto _ : st) benchmark::DoNotOptimize(hexplane_interp_batch(f, p, 7.5));
}

void BM_hexplane_batch_serial(benchmark::State& st) {
    const HexPlaneField f = field();
    const auto p = points(st.range(0));
    for (auto _ : st) benchmark::DoNotOptimize(hexplane_interp_batch_serial(f, p, 7.5));
}

} // namespace

BENCHMARK(BM_render_tiled)->Args({64, 64})->Args({256, 128})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_render_serial)->Args({64, 64})->Args({256, 128})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_backward_tiled)->Args({64, 64})->Args({256, 128})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_backward_serial)->Args({64, 64})->Args({256, 128})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_hexplane_batch)->Arg(64)->Arg(4096)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_hexplane_batch_serial)->Arg(64)->Arg(4096)->Unit(benchmark::kMicrosecond);

BENCHMARK_MAIN();
