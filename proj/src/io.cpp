#include "t4d/io.hpp"

#include <png.h>

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>

namespace t4d {

static_assert(std::endian::native == std::endian::little,
              "binary formats are written with native little-endian stores");

namespace {

class Writer {
public:
    explicit Writer(const fs::path& path) : out_(path, std::ios::binary | std::ios::trunc), path_(path) {
        if (!out_) throw IoError("cannot open " + path.string() + " for writing");
    }
    void magic(const char (&m)[5]) { out_.write(m, 4); }
    void u32(std::uint32_t v) { raw(&v, 4); }
    void f32(double v) {
        const float f = static_cast<float>(v);
        raw(&f, 4);
    }
    void f64(double v) { raw(&v, 8); }
    void finish() {
        out_.flush();
        if (!out_) throw IoError("write failed: " + path_.string());
    }

private:
    void raw(const void* p, std::size_t n) { out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }
    std::ofstream out_;
    fs::path path_;
};

class Reader {
public:
    explicit Reader(const fs::path& path) : in_(path, std::ios::binary), path_(path) {
        if (!in_) throw IoError("cannot open " + path.string());
    }
    void expect_magic(const char (&m)[5]) {
        char got[4];
        raw(got, 4);
        if (std::memcmp(got, m, 4) != 0)
            throw IoError(path_.string() + ": expected section " + std::string(m));
    }
    std::uint32_t u32() {
        std::uint32_t v;
        raw(&v, 4);
        return v;
    }
    double f32() {
        float v;
        raw(&v, 4);
        return v;
    }
    double f64() {
        double v;
        raw(&v, 8);
        return v;
    }
    bool at_end() { return in_.peek() == std::char_traits<char>::eof(); }

private:
    void raw(void* p, std::size_t n) {
        in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
        if (in_.gcount() != static_cast<std::streamsize>(n)) throw IoError(path_.string() + ": truncated file");
    }
    std::ifstream in_;
    fs::path path_;
};

std::ofstream open_text(const fs::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out.precision(17);
    return out;
}

std::ifstream open_text_in(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    return in;
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    return out;
}

double to_double(const std::string& s, const fs::path& path) {
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw IoError(path.string() + ": bad number '" + s + "'");
    }
}

} // namespace

// --------------------------------------------------------------- images

void write_imgf(const fs::path& path, const ImagePlane& img) {
    Writer w(path);
    w.magic("IMGF");
    w.u32(img.height());
    w.u32(img.width());
    w.u32(img.channels());
    for (double v : img.data()) w.f32(v);
    w.finish();
}

ImagePlane read_imgf(const fs::path& path, ChannelKind kind) {
    Reader r(path);
    r.expect_magic("IMGF");
    const int h = static_cast<int>(r.u32()), w = static_cast<int>(r.u32()), c = static_cast<int>(r.u32());
    if (h < 0 || w < 0 || c < 1 || static_cast<long long>(h) * w * c > (1LL << 31))
        throw IoError(path.string() + ": implausible IMGF dimensions");
    ImagePlane img(h, w, c, kind);
    for (double& v : img.data()) v = r.f32();
    return img;
}

void write_png(const fs::path& path, const ImagePlane& img) {
    if (img.channels() != 1 && img.channels() != 3)
        throw InvalidArgument("write_png: only 1- or 3-channel planes");
    std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "wb"), &std::fclose);
    if (!fp) throw IoError("cannot open " + path.string() + " for writing");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw IoError("libpng initialisation failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("PNG encoding failed for " + path.string());
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, img.width(), img.height(), 8,
                 img.channels() == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<png_byte> row(static_cast<std::size_t>(img.width()) * img.channels());
    for (int r = 0; r < img.height(); ++r) {
        for (int c = 0; c < img.width(); ++c)
            for (int q = 0; q < img.channels(); ++q) {
                const double v = std::clamp(img.at(r, c, q), 0.0, 1.0);
                row[static_cast<std::size_t>(c) * img.channels() + q] =
                    static_cast<png_byte>(std::lround(v * 255.0));
            }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

// ------------------------------------------------------------ Gaussians

void write_gaussians(const fs::path& path, std::span<const Gaussian3D> gs) {
    Writer w(path);
    w.magic("GS4D");
    const SH4DCoeffs ref = gs.empty() ? SH4DCoeffs() : gs.front().sh;
    w.u32(static_cast<std::uint32_t>(gs.size()));
    w.u32(ref.l_max());
    w.u32(ref.terms());
    w.u32(ref.n_frames());
    for (const auto& g : gs) {
        if (g.sh.l_max() != ref.l_max() || g.sh.terms() != ref.terms() || g.sh.n_frames() != ref.n_frames())
            throw ShapeMismatch("write_gaussians: SH layouts differ between Gaussians");
        for (int a = 0; a < 3; ++a) w.f64(g.position[a]);
        w.f64(g.opacity);
        for (int a = 0; a < 4; ++a) w.f64(g.rotation[a]);
        for (int a = 0; a < 3; ++a) w.f64(g.scale[a]);
        for (double v : g.sh.weights()) w.f64(v);
    }
    w.finish();
}

std::vector<Gaussian3D> read_gaussians(const fs::path& path) {
    Reader r(path);
    r.expect_magic("GS4D");
    const std::uint32_t n = r.u32();
    const int l_max = static_cast<int>(r.u32()), terms = static_cast<int>(r.u32());
    const int frames = static_cast<int>(r.u32());
    if (l_max > 8 || terms < 1 || terms > 64 || frames < 1 || n > (1u << 24))
        throw IoError(path.string() + ": implausible Gaussian header");
    std::vector<Gaussian3D> gs(n);
    for (auto& g : gs) {
        for (int a = 0; a < 3; ++a) g.position[a] = r.f64();
        g.opacity = r.f64();
        for (int a = 0; a < 4; ++a) g.rotation[a] = r.f64();
        for (int a = 0; a < 3; ++a) g.scale[a] = r.f64();
        g.sh = SH4DCoeffs(l_max, terms, frames);
        for (double& v : g.sh.weights()) v = r.f64();
    }
    return gs;
}

// -------------------------------------------------------------- cameras

void write_cameras_csv(const fs::path& path, std::span<const CameraRecord> cams) {
    auto out = open_text(path);
    out << "view,split,width,height,fx,fy,cx,cy";
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 4; ++c) out << ",e" << r << c;
    out << '\n';
    for (std::size_t i = 0; i < cams.size(); ++i) {
        const Camera& cam = cams[i].camera;
        out << i << ',' << (cams[i].heldout ? "heldout" : "train") << ',' << cam.width << ','
            << cam.height << ',' << cam.fx() << ',' << cam.fy() << ',' << cam.cx() << ',' << cam.cy();
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 4; ++c) out << ',' << cam.E(r, c);
        out << '\n';
    }
    if (!out) throw IoError("write failed: " + path.string());
}

std::vector<CameraRecord> read_cameras_csv(const fs::path& path) {
    auto in = open_text_in(path);
    std::string line;
    std::getline(in, line);
    std::vector<CameraRecord> cams;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto cells = split_csv(line);
        if (cells.size() != 20) throw IoError(path.string() + ": expected 20 columns");
        CameraRecord rec;
        rec.heldout = cells[1] == "heldout";
        Camera& cam = rec.camera;
        cam.width = static_cast<int>(to_double(cells[2], path));
        cam.height = static_cast<int>(to_double(cells[3], path));
        cam.K = Mat3::Identity();
        cam.K(0, 0) = to_double(cells[4], path);
        cam.K(1, 1) = to_double(cells[5], path);
        cam.K(0, 2) = to_double(cells[6], path);
        cam.K(1, 2) = to_double(cells[7], path);
        cam.E = Mat4::Identity();
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 4; ++c) cam.E(r, c) = to_double(cells[8 + r * 4 + c], path);
        cams.push_back(rec);
    }
    return cams;
}

// --------------------------------------------------------------- tracks

void write_tracks(const fs::path& path, const TrackSet& tracks) {
    auto out = open_text(path);
    for (const auto& view : tracks)
        for (const Track& t : view) {
            out << t.view << ' ' << t.id << '\n';
            for (int j = 0; j < t.frames(); ++j)
                out << j << ' ' << t.positions[j].x() << ' ' << t.positions[j].y() << ' '
                    << (t.visible_at(j) ? 1 : 0) << '\n';
        }
    if (!out) throw IoError("write failed: " + path.string());
}

TrackSet read_tracks(const fs::path& path, int views) {
    auto in = open_text_in(path);
    TrackSet set(views);
    std::string line;
    Track* cur = nullptr;
    while (std::getline(in, line)) {
        std::istringstream ss(line);
        std::vector<std::string> tok;
        for (std::string s; ss >> s;) tok.push_back(s);
        if (tok.empty()) continue;
        if (tok.size() == 2) {
            const int v = static_cast<int>(to_double(tok[0], path));
            if (v < 0 || v >= views) throw IoError(path.string() + ": track view out of range");
            set[v].push_back({});
            cur = &set[v].back();
            cur->view = v;
            cur->id = static_cast<int>(to_double(tok[1], path));
        } else if (tok.size() == 4 && cur) {
            if (static_cast<int>(to_double(tok[0], path)) != cur->frames())
                throw IoError(path.string() + ": track frames out of order");
            cur->positions.emplace_back(to_double(tok[1], path), to_double(tok[2], path));
            cur->visible.push_back(tok[3] == "1" ? 1 : 0);
        } else {
            throw IoError(path.string() + ": malformed track line");
        }
    }
    return set;
}

// --------------------------------------------------------------- motion

void write_motion_csv(const fs::path& path, const MotionTable& m) {
    auto out = open_text(path);
    out << "frame,gaussian,x,y,z,qw,qx,qy,qz,sx,sy,sz\n";
    for (int j = 0; j < m.frames(); ++j)
        for (std::size_t i = 0; i < m.positions[j].size(); ++i) {
            const Vec3& p = m.positions[j][i];
            const Vec4& q = m.rotations[j][i];
            const Vec3& s = m.scales[j][i];
            out << j << ',' << i << ',' << p.x() << ',' << p.y() << ',' << p.z() << ',' << q[0] << ','
                << q[1] << ',' << q[2] << ',' << q[3] << ',' << s.x() << ',' << s.y() << ',' << s.z()
                << '\n';
        }
    if (!out) throw IoError("write failed: " + path.string());
}

MotionTable read_motion_csv(const fs::path& path) {
    auto in = open_text_in(path);
    std::string line;
    std::getline(in, line);
    MotionTable m;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto c = split_csv(line);
        if (c.size() != 12) throw IoError(path.string() + ": expected 12 columns");
        const auto j = static_cast<std::size_t>(to_double(c[0], path));
        const auto i = static_cast<std::size_t>(to_double(c[1], path));
        if (j >= m.positions.size()) {
            m.positions.resize(j + 1);
            m.rotations.resize(j + 1);
            m.scales.resize(j + 1);
        }
        if (i != m.positions[j].size()) throw IoError(path.string() + ": rows out of order");
        double v[10];
        for (int k = 0; k < 10; ++k) v[k] = to_double(c[2 + k], path);
        m.positions[j].emplace_back(v[0], v[1], v[2]);
        m.rotations[j].emplace_back(v[3], v[4], v[5], v[6]);
        m.scales[j].emplace_back(v[7], v[8], v[9]);
    }
    return m;
}

// ----------------------------------------------------------- checkpoint

void save_checkpoint(const fs::path& path, const DynamicModel& model) {
    Writer w(path);
    const HexPlaneField& hex = model.hex;
    w.magic("HEX4");
    w.u32(hex.config().levels);
    for (int k = 0; k < 6; ++k) {
        w.u32(hex.plane(0, k).rows);
        w.u32(hex.plane(0, k).cols);
    }
    w.u32(hex.config().channels);
    w.u32(hex.n_frames());
    for (int a = 0; a < 3; ++a) w.f64(hex.box().min[a]);
    for (int a = 0; a < 3; ++a) w.f64(hex.box().max[a]);
    for (double v : hex.parameters()) w.f32(v);

    const DeformationDecoder& dec = model.decoder;
    w.magic("DEC1");
    w.u32(dec.in_dim());
    w.u32(dec.hidden());
    w.u32(3);
    for (int d : DeformationDecoder::kHeadDims) w.u32(d);
    for (double v : dec.parameters()) w.f32(v);

    w.magic("SH4D");
    const SH4DCoeffs& ref = model.canonical.front().sh;
    w.u32(static_cast<std::uint32_t>(model.canonical.size()));
    w.u32(SH4DCoeffs::kChannels);
    w.u32(ref.l_max());
    w.u32(ref.terms());
    w.u32(ref.n_frames());
    for (const auto& g : model.canonical)
        for (double v : g.sh.weights()) w.f32(v);
    w.finish();
}

namespace {

CheckpointShape read_hex_header(Reader& r, const fs::path& path) {
    r.expect_magic("HEX4");
    CheckpointShape s;
    s.hex.levels = static_cast<int>(r.u32());
    std::array<std::uint32_t, 12> dims{};
    for (auto& d : dims) d = r.u32();
    s.hex.spatial_res = static_cast<int>(dims[0]);
    s.hex.temporal_res = static_cast<int>(dims[2 * 3 + 1]);
    s.hex.channels = static_cast<int>(r.u32());
    s.n_frames = static_cast<int>(r.u32());
    for (int a = 0; a < 3; ++a) s.box.min[a] = r.f64();
    for (int a = 0; a < 3; ++a) s.box.max[a] = r.f64();
    if (s.hex.levels < 1 || s.hex.levels > 8 || s.hex.channels < 1 || s.hex.spatial_res < 1 ||
        s.hex.temporal_res < 1 || s.n_frames < 1)
        throw IoError(path.string() + ": implausible HEX4 header");
    return s;
}

} // namespace

CheckpointShape read_checkpoint_shape(const fs::path& path) {
    Reader r(path);
    CheckpointShape s = read_hex_header(r, path);
    const HexPlaneField probe(s.hex, s.box, s.n_frames);
    for (std::size_t i = 0; i < probe.parameters().size(); ++i) r.f32();
    r.expect_magic("DEC1");
    s.decoder_in = static_cast<int>(r.u32());
    s.decoder_hidden = static_cast<int>(r.u32());
    return s;
}

void load_checkpoint(const fs::path& path, DynamicModel& model) {
    Reader r(path);
    const CheckpointShape s = read_hex_header(r, path);
    const HexPlaneConfig& mc = model.hex.config();
    if (s.hex.levels != mc.levels || s.hex.spatial_res != mc.spatial_res ||
        s.hex.temporal_res != mc.temporal_res || s.hex.channels != mc.channels)
        throw ShapeMismatch("checkpoint Hex-plane layout differs from the model");
    HexPlaneField hex(s.hex, s.box, s.n_frames);
    for (double& v : hex.parameters()) v = r.f32();

    r.expect_magic("DEC1");
    const int in_dim = static_cast<int>(r.u32()), hidden = static_cast<int>(r.u32());
    if (r.u32() != 3) throw IoError(path.string() + ": decoder must have three heads");
    for (int d : DeformationDecoder::kHeadDims)
        if (static_cast<int>(r.u32()) != d) throw IoError(path.string() + ": unexpected head width");
    if (in_dim != hex.output_dims() + model.feature_dims)
        throw ShapeMismatch("checkpoint decoder input does not match the model's features");
    if (hidden != model.decoder.hidden())
        throw ShapeMismatch("checkpoint decoder width differs from the model");
    DeformationDecoder dec(in_dim, hidden, 0);
    for (double& v : dec.parameters()) v = r.f32();

    r.expect_magic("SH4D");
    const std::uint32_t n = r.u32();
    const std::uint32_t ch = r.u32();
    const int l_max = static_cast<int>(r.u32()), terms = static_cast<int>(r.u32());
    const int frames = static_cast<int>(r.u32());
    if (n != model.canonical.size() || ch != SH4DCoeffs::kChannels)
        throw ShapeMismatch("checkpoint SH block does not match the canonical set");
    for (const auto& g : model.canonical)
        if (g.sh.l_max() != l_max || g.sh.terms() != terms || g.sh.n_frames() != frames)
            throw ShapeMismatch("checkpoint SH layout differs from the model");
    std::vector<SH4DCoeffs> sh(n, SH4DCoeffs(l_max, terms, frames));
    for (auto& c : sh)
        for (double& v : c.weights()) v = r.f32();
    if (!r.at_end()) throw IoError(path.string() + ": trailing bytes after the SH block");
    if (s.n_frames != model.n_frames) throw ShapeMismatch("checkpoint frame count differs from the model");
    model.hex = std::move(hex);
    model.decoder = std::move(dec);
    for (std::size_t i = 0; i < n; ++i) model.canonical[i].sh = std::move(sh[i]);
}

// ----------------------------------------------------------------- text

std::string read_text(const fs::path& path) {
    auto in = open_text_in(path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
    auto out = open_text(path);
    out << text;
    if (!out) throw IoError("write failed: " + path.string());
}

} // namespace t4d
