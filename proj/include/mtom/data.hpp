#pragma once

// Canonical episode schema, the MTEP1 on-disk format, split handling and a
// synthetic generator. The generator runs a small grid world with two agents
// and visibility rules; belief labels and false-belief flags fall out of
// replaying who saw what.

#include <array>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mtom/tensor.hpp"

namespace mtom {

enum class DatasetMode { Boss, Tbd };

inline std::string mode_name(DatasetMode m) { return m == DatasetMode::Boss ? "boss" : "tbd"; }
inline DatasetMode mode_from_name(const std::string& s) {
    if (s == "boss") return DatasetMode::Boss;
    if (s == "tbd") return DatasetMode::Tbd;
    throw TensorError("unknown dataset mode '" + s + "'");
}

constexpr std::size_t kNumObjectClasses = 27;
constexpr std::size_t kBoxSlots = 27;
constexpr std::size_t kBoxFields = 5;  // x1,y1,x2,y2,presence
constexpr std::size_t kPoseJoints = 17;
constexpr std::size_t kClipLen = 5;
constexpr std::size_t kNumMinds = 5;  // m1, m2, m12, m21, mc
constexpr std::size_t kNumDynClasses = 4;

enum BeliefDyn : std::int32_t { kOccur = 0, kDisappear = 1, kUpdate = 2, kNull = 3 };

class DataError : public std::runtime_error {
  public:
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

struct Episode {
    std::string id;
    DatasetMode mode = DatasetMode::Boss;
    std::size_t t_len = 0;
    std::size_t frame_h = 32, frame_w = 32;
    std::size_t gaze_dim = 3;        // 3 boss, 2 tbd
    std::size_t pose_coord_dim = 3;  // 3 boss, 2 tbd

    std::vector<float> frames;                 // [T,3,H,W]
    std::vector<float> boxes;                  // [T,27,5]
    std::vector<float> ocr;                    // [T,27,27], boss only
    std::array<std::vector<float>, 2> gaze;    // [T,gaze_dim]
    std::array<std::vector<float>, 2> pose;    // [T,17,pose_coord_dim]
    std::array<std::vector<float>, 2> ego;     // [T,3,H,W], tbd only

    std::array<std::vector<std::int32_t>, 2> boss_labels;  // [T], boss only
    std::vector<std::int32_t> tbd_labels;                  // [clips,5], tbd only
    std::vector<std::int32_t> fb_flags;                    // [clips,5], tbd only

    std::size_t clip_count() const { return t_len / kClipLen; }

    void validate() const {
        auto expect = [&](std::size_t got, std::size_t want, const std::string& field) {
            if (got != want)
                throw DataError("episode '" + id + "': field " + field + " has length " +
                                std::to_string(got) + ", expected " + std::to_string(want));
        };
        const std::size_t fpix = 3 * frame_h * frame_w;
        expect(frames.size(), t_len * fpix, "frames");
        expect(boxes.size(), t_len * kBoxSlots * kBoxFields, "boxes");
        if (mode == DatasetMode::Boss)
            expect(ocr.size(), t_len * kNumObjectClasses * kNumObjectClasses, "ocr");
        else
            expect(ocr.size(), 0, "ocr");
        for (int p = 0; p < 2; ++p) {
            const std::string who = "person" + std::to_string(p + 1);
            expect(gaze[p].size(), t_len * gaze_dim, who + ".gaze");
            expect(pose[p].size(), t_len * kPoseJoints * pose_coord_dim, who + ".pose");
            if (mode == DatasetMode::Tbd)
                expect(ego[p].size(), t_len * fpix, who + ".ego");
            else
                expect(ego[p].size(), 0, who + ".ego");
        }
        if (mode == DatasetMode::Boss) {
            for (int p = 0; p < 2; ++p) {
                expect(boss_labels[p].size(), t_len,
                       "person" + std::to_string(p + 1) + ".labels");
                for (auto v : boss_labels[p])
                    if (v < 0 || v >= static_cast<std::int32_t>(kNumObjectClasses))
                        throw DataError("episode '" + id + "': boss label out of range");
            }
        } else {
            expect(tbd_labels.size(), clip_count() * kNumMinds, "tbd_labels");
            expect(fb_flags.size(), clip_count() * kNumMinds, "fb_flags");
            for (auto v : tbd_labels)
                if (v < 0 || v >= static_cast<std::int32_t>(kNumDynClasses))
                    throw DataError("episode '" + id + "': tbd label out of range");
        }
    }
};

// ---- MTEP1 serialization ----

namespace io_detail {

inline void write_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw DataError("corrupt file: truncated while reading array header");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) |
           (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void write_f32_le(std::ostream& os, const std::vector<float>& data) {
    for (float f : data) {
        std::uint32_t bits;
        std::memcpy(&bits, &f, 4);
        write_u32(os, bits);
    }
}

inline void read_f32_le(std::istream& is, std::vector<float>& data) {
    for (auto& f : data) {
        const std::uint32_t bits = read_u32(is);
        std::memcpy(&f, &bits, 4);
    }
}

inline void write_array(std::ostream& os, const std::string& name, char kind,
                        const std::vector<std::uint32_t>& dims) {
    os << "array " << kind << " " << name;
    for (auto d : dims) os << " " << d;
    os << "\n";
}

inline void write_farray(std::ostream& os, const std::string& name,
                         const std::vector<std::uint32_t>& dims,
                         const std::vector<float>& data) {
    write_array(os, name, 'f', dims);
    write_f32_le(os, data);
}

inline void write_iarray(std::ostream& os, const std::string& name,
                         const std::vector<std::uint32_t>& dims,
                         const std::vector<std::int32_t>& data) {
    write_array(os, name, 'i', dims);
    for (auto v : data) write_u32(os, static_cast<std::uint32_t>(v));
}

}  // namespace io_detail

inline void save_episode(const Episode& ep, const std::filesystem::path& path) {
    ep.validate();
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot open '" + path.string() + "' for writing");
    os << "MTEP1\n";
    os << "id = " << ep.id << "\n";
    os << "mode = " << mode_name(ep.mode) << "\n";
    os << "T = " << ep.t_len << "\n";
    os << "frame_h = " << ep.frame_h << "\n";
    os << "frame_w = " << ep.frame_w << "\n";
    os << "gaze_dim = " << ep.gaze_dim << "\n";
    os << "pose_coord_dim = " << ep.pose_coord_dim << "\n";
    os << "end_header\n";
    using namespace io_detail;
    const auto T = static_cast<std::uint32_t>(ep.t_len);
    const auto H = static_cast<std::uint32_t>(ep.frame_h);
    const auto W = static_cast<std::uint32_t>(ep.frame_w);
    write_farray(os, "frames", {T, 3, H, W}, ep.frames);
    write_farray(os, "boxes", {T, kBoxSlots, kBoxFields}, ep.boxes);
    if (ep.mode == DatasetMode::Boss)
        write_farray(os, "ocr", {T, kNumObjectClasses, kNumObjectClasses}, ep.ocr);
    for (int p = 0; p < 2; ++p) {
        const std::string who = "person" + std::to_string(p + 1);
        write_farray(os, who + ".gaze", {T, static_cast<std::uint32_t>(ep.gaze_dim)},
                     ep.gaze[p]);
        write_farray(os, who + ".pose",
                     {T, kPoseJoints, static_cast<std::uint32_t>(ep.pose_coord_dim)},
                     ep.pose[p]);
        if (ep.mode == DatasetMode::Tbd) write_farray(os, who + ".ego", {T, 3, H, W}, ep.ego[p]);
        if (ep.mode == DatasetMode::Boss)
            write_iarray(os, who + ".labels", {T}, ep.boss_labels[p]);
    }
    if (ep.mode == DatasetMode::Tbd) {
        const auto C = static_cast<std::uint32_t>(ep.clip_count());
        write_iarray(os, "tbd_labels", {C, kNumMinds}, ep.tbd_labels);
        write_iarray(os, "fb_flags", {C, kNumMinds}, ep.fb_flags);
    }
    os << "end\n";
    if (!os) throw DataError("write error on '" + path.string() + "'");
}

inline Episode load_episode(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open '" + path.string() + "'");
    std::string line;
    if (!std::getline(is, line) || line != "MTEP1")
        throw DataError("'" + path.string() + "': bad magic, not an MTEP1 file");
    Episode ep;
    while (std::getline(is, line)) {
        if (line == "end_header") break;
        const auto eq = line.find(" = ");
        if (eq == std::string::npos)
            throw DataError("'" + path.string() + "': malformed header line '" + line + "'");
        const std::string key = line.substr(0, eq);
        const std::string val = line.substr(eq + 3);
        if (key == "id") ep.id = val;
        else if (key == "mode") ep.mode = mode_from_name(val);
        else if (key == "T") ep.t_len = std::stoul(val);
        else if (key == "frame_h") ep.frame_h = std::stoul(val);
        else if (key == "frame_w") ep.frame_w = std::stoul(val);
        else if (key == "gaze_dim") ep.gaze_dim = std::stoul(val);
        else if (key == "pose_coord_dim") ep.pose_coord_dim = std::stoul(val);
        else throw DataError("'" + path.string() + "': unknown header key '" + key + "'");
    }
    if (!is) throw DataError("'" + path.string() + "': truncated header");

    using namespace io_detail;
    auto read_one = [&](const std::string& decl) {
        std::istringstream ls(decl);
        std::string tag, kind, name;
        ls >> tag >> kind >> name;
        if (tag != "array" || (kind != "f" && kind != "i"))
            throw DataError("'" + path.string() + "': malformed array declaration '" + decl + "'");
        std::vector<std::uint32_t> dims;
        std::uint32_t d;
        while (ls >> d) dims.push_back(d);
        std::size_t n = 1;
        for (auto dd : dims) n *= dd;
        std::vector<float> fdata;
        std::vector<std::int32_t> idata;
        if (kind == "f") {
            fdata.resize(n);
            read_f32_le(is, fdata);
        } else {
            idata.resize(n);
            for (auto& v : idata) v = static_cast<std::int32_t>(read_u32(is));
        }
        return std::tuple(name, dims, fdata, idata);
    };

    auto check_t = [&](const std::vector<std::uint32_t>& dims, const std::string& name) {
        if (dims.empty() || dims[0] != ep.t_len)
            throw DataError("'" + path.string() + "': array '" + name +
                            "' extent disagrees with manifest T = " +
                            std::to_string(ep.t_len));
    };

    bool saw_end = false;
    while (std::getline(is, line)) {
        if (line == "end") {
            saw_end = true;
            break;
        }
        auto [name, dims, fdata, idata] = read_one(line);
        if (name == "frames") { check_t(dims, name); ep.frames = fdata; }
        else if (name == "boxes") { check_t(dims, name); ep.boxes = fdata; }
        else if (name == "ocr") { check_t(dims, name); ep.ocr = fdata; }
        else if (name == "person1.gaze") { check_t(dims, name); ep.gaze[0] = fdata; }
        else if (name == "person2.gaze") { check_t(dims, name); ep.gaze[1] = fdata; }
        else if (name == "person1.pose") { check_t(dims, name); ep.pose[0] = fdata; }
        else if (name == "person2.pose") { check_t(dims, name); ep.pose[1] = fdata; }
        else if (name == "person1.ego") { check_t(dims, name); ep.ego[0] = fdata; }
        else if (name == "person2.ego") { check_t(dims, name); ep.ego[1] = fdata; }
        else if (name == "person1.labels") { check_t(dims, name); ep.boss_labels[0] = idata; }
        else if (name == "person2.labels") { check_t(dims, name); ep.boss_labels[1] = idata; }
        else if (name == "tbd_labels") ep.tbd_labels = idata;
        else if (name == "fb_flags") ep.fb_flags = idata;
        else throw DataError("'" + path.string() + "': unknown array '" + name + "'");
    }
    if (!saw_end) throw DataError("'" + path.string() + "': truncated, missing end marker");
    ep.validate();
    return ep;
}

// ---- splits and manifests ----

struct SplitSpec {
    std::vector<std::string> train, val, test;
};

inline void save_path_list(const std::vector<std::string>& paths,
                           const std::filesystem::path& file) {
    std::ofstream os(file);
    if (!os) throw DataError("cannot open '" + file.string() + "' for writing");
    for (const auto& p : paths) os << p << "\n";
}

inline std::vector<std::string> load_path_list(const std::filesystem::path& file) {
    std::ifstream is(file);
    if (!is) throw DataError("cannot open '" + file.string() + "'");
    std::vector<std::string> out;
    std::string line;
    while (std::getline(is, line))
        if (!line.empty()) out.push_back(line);
    return out;
}

// ---- synthetic generator ----

struct SyntheticConfig {
    std::uint64_t seed = 1;
    std::size_t episode_count = 16;
    std::size_t t_len = 10;
    std::size_t frame_size = 32;
    std::size_t object_count = 6;
    DatasetMode mode = DatasetMode::Boss;
    double move_rate = 0.15;
    double leave_room_rate = 0.1;
    double attend_rate = 0.3;
    double joint_attend_rate = 0.15;
    double false_belief_rate = 0.3;  // probability a leave-room window hides a move

    void validate() const {
        auto prob = [](double v, const char* name) {
            if (v < 0.0 || v > 1.0)
                throw DataError(std::string("synthetic config: ") + name +
                                " must be in [0,1], got " + std::to_string(v));
        };
        prob(move_rate, "move_rate");
        prob(leave_room_rate, "leave_room_rate");
        prob(attend_rate, "attend_rate");
        prob(joint_attend_rate, "joint_attend_rate");
        prob(false_belief_rate, "false_belief_rate");
        if (object_count == 0 || object_count > kNumObjectClasses)
            throw DataError("synthetic config: object_count must be in [1," +
                            std::to_string(kNumObjectClasses) + "]");
        if (episode_count == 0) throw DataError("synthetic config: episode_count must be > 0");
        if (frame_size < 22)
            throw DataError("synthetic config: frame_size below CNN minimum 22");
        if (t_len == 0) throw DataError("synthetic config: T must be > 0");
    }
};

// World event log entry; tests replay these to cross-check labels.
struct WorldEvent {
    enum Type { MoveObject, AgentLeave, AgentReturn, Attend, JointAttend, SwitchTarget };
    std::size_t frame = 0;
    Type type = MoveObject;
    int agent = -1;    // acting agent, -1 for world events
    int object = -1;   // object index
    int to_cell = -1;  // destination cell / attended cell / new target object
};

struct WorldTrace {
    std::vector<WorldEvent> events;
    std::vector<int> object_classes;          // per object index -> class id
    std::vector<int> initial_cells;           // per object index
    std::array<int, 2> agent_cells{};         // fixed agent positions (grid cells)
};

constexpr std::size_t kGridSize = 8;

namespace sim_detail {

// Belief content about the selected object: its cell, or -1 when the holder
// believes it absent / does not know it.
struct MindState {
    std::array<int, 2> first;    // m1, m2
    std::array<int, 2> second;   // m12, m21 (agent i's model of the other's belief)
    int common;                  // mc
};

inline void apply_move(int& slot, int to_cell) { slot = to_cell; }

}  // namespace sim_detail

// Replays an event trace and returns per-clip labels and false-belief flags
// for the selected object (object 0). Shared by the generator and by the
// oracle path in tests, which drives it from independently scripted events.
inline void derive_tbd_labels(const WorldTrace& trace, std::size_t t_len,
                              std::vector<std::int32_t>& labels,
                              std::vector<std::int32_t>& flags) {
    const std::size_t clips = t_len / kClipLen;
    labels.assign(clips * kNumMinds, kNull);
    flags.assign(clips * kNumMinds, 0);

    int world = trace.initial_cells.at(0);
    sim_detail::MindState minds{{world, world}, {world, world}, world};
    std::array<bool, 2> present{true, true};

    std::size_t ev = 0;
    for (std::size_t clip = 0; clip < clips; ++clip) {
        const sim_detail::MindState start = minds;
        const std::size_t clip_end = (clip + 1) * kClipLen;
        for (; ev < trace.events.size() && trace.events[ev].frame < clip_end; ++ev) {
            const WorldEvent& e = trace.events[ev];
            switch (e.type) {
                case WorldEvent::AgentLeave:
                    present[e.agent] = false;
                    break;
                case WorldEvent::AgentReturn:
                    present[e.agent] = true;
                    break;
                case WorldEvent::MoveObject:
                    if (e.object != 0) break;  // labels track the selected object
                    world = e.to_cell;
                    for (int a = 0; a < 2; ++a) {
                        if (!present[a]) continue;
                        minds.first[a] = e.to_cell;
                        // a sees the other observing only if both are present
                        if (present[1 - a]) minds.second[a] = e.to_cell;
                    }
                    break;
                case WorldEvent::JointAttend:
                    if (present[0] && present[1]) {
                        minds.common = world;
                        minds.first = {world, world};
                        minds.second = {world, world};
                    }
                    break;
                default:
                    break;
            }
        }
        auto dyn = [](int before, int after) -> std::int32_t {
            if (before == after) return kNull;
            if (before < 0) return kOccur;
            if (after < 0) return kDisappear;
            return kUpdate;
        };
        labels[clip * kNumMinds + 0] = dyn(start.first[0], minds.first[0]);
        labels[clip * kNumMinds + 1] = dyn(start.first[1], minds.first[1]);
        labels[clip * kNumMinds + 2] = dyn(start.second[0], minds.second[0]);
        labels[clip * kNumMinds + 3] = dyn(start.second[1], minds.second[1]);
        labels[clip * kNumMinds + 4] = dyn(start.common, minds.common);
        flags[clip * kNumMinds + 0] = minds.first[0] != world;
        flags[clip * kNumMinds + 1] = minds.first[1] != world;
        flags[clip * kNumMinds + 2] = minds.second[0] != minds.first[1];
        flags[clip * kNumMinds + 3] = minds.second[1] != minds.first[0];
        flags[clip * kNumMinds + 4] = 0;  // common mind carries no false-belief annotation
    }
}

namespace sim_detail {

inline void cell_center(int cell, std::size_t frame_size, double& cx, double& cy) {
    const double step = static_cast<double>(frame_size) / kGridSize;
    cx = (cell % kGridSize + 0.5) * step;
    cy = (cell / kGridSize + 0.5) * step;
}

inline void class_color(int cls, float& r, float& g, float& b) {
    // fixed palette spread over hue
    const double h = (cls * 360.0 / kNumObjectClasses);
    const double x = 1.0 - std::abs(std::fmod(h / 60.0, 2.0) - 1.0);
    double rr = 0, gg = 0, bb = 0;
    if (h < 60) { rr = 1; gg = x; }
    else if (h < 120) { rr = x; gg = 1; }
    else if (h < 180) { gg = 1; bb = x; }
    else if (h < 240) { gg = x; bb = 1; }
    else if (h < 300) { rr = x; bb = 1; }
    else { rr = 1; bb = x; }
    r = static_cast<float>(0.25 + 0.75 * rr);
    g = static_cast<float>(0.25 + 0.75 * gg);
    b = static_cast<float>(0.25 + 0.75 * bb);
}

inline void draw_blob(std::vector<float>& frame, std::size_t t, std::size_t h, std::size_t w,
                      double cx, double cy, float r, float g, float b) {
    const std::size_t fpix = 3 * h * w;
    const int ix = static_cast<int>(cx), iy = static_cast<int>(cy);
    for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
            const int x = ix + dx, y = iy + dy;
            if (x < 0 || y < 0 || x >= static_cast<int>(w) || y >= static_cast<int>(h))
                continue;
            float* px = frame.data() + t * fpix;
            px[(0 * h + y) * w + x] = r;
            px[(1 * h + y) * w + x] = g;
            px[(2 * h + y) * w + x] = b;
        }
}

// Stick figure with 17 joints, COCO-style ordering: nose, eyes, ears,
// shoulders, elbows, wrists, hips, knees, ankles. Planar template rotated
// toward the attended direction.
inline const std::array<std::array<double, 2>, kPoseJoints>& pose_template() {
    static const std::array<std::array<double, 2>, kPoseJoints> joints = {{
        {0.0, 1.75},   {-0.07, 1.82}, {0.07, 1.82},  {-0.16, 1.78}, {0.16, 1.78},
        {-0.35, 1.45}, {0.35, 1.45},  {-0.45, 1.10}, {0.45, 1.10},  {-0.50, 0.80},
        {0.50, 0.80},  {-0.20, 0.95}, {0.20, 0.95},  {-0.22, 0.50}, {0.22, 0.50},
        {-0.24, 0.05}, {0.24, 0.05},
    }};
    return joints;
}

}  // namespace sim_detail

// Skeleton edge list used as the pose GCN adjacency (COCO-style topology).
inline Tensor<float> pose_adjacency() {
    static const int edges[][2] = {{0, 1},  {0, 2},  {1, 3},   {2, 4},   {0, 5},   {0, 6},
                                   {5, 7},  {7, 9},  {6, 8},   {8, 10},  {5, 6},   {5, 11},
                                   {6, 12}, {11, 12}, {11, 13}, {13, 15}, {12, 14}, {14, 16}};
    Tensor<float> a = Tensor<float>::zeros({kPoseJoints, kPoseJoints});
    for (const auto& e : edges) {
        a.value()[e[0] * kPoseJoints + e[1]] = 1.0f;
        a.value()[e[1] * kPoseJoints + e[0]] = 1.0f;
    }
    return a;
}

struct GeneratedEpisode {
    Episode episode;
    WorldTrace trace;
};

namespace sim_detail {

inline WorldTrace simulate_events(const SyntheticConfig& cfg, Rng& rng) {
    WorldTrace trace;
    // distinct object classes per episode
    std::vector<int> classes(kNumObjectClasses);
    for (std::size_t i = 0; i < kNumObjectClasses; ++i) classes[i] = static_cast<int>(i);
    rng.shuffle(classes);
    classes.resize(cfg.object_count);
    trace.object_classes = classes;
    std::vector<int> cells(kGridSize * kGridSize);
    for (std::size_t i = 0; i < cells.size(); ++i) cells[i] = static_cast<int>(i);
    rng.shuffle(cells);
    trace.initial_cells.assign(cells.begin(), cells.begin() + cfg.object_count);
    trace.agent_cells = {static_cast<int>(3 * kGridSize + 0),
                         static_cast<int>(4 * kGridSize + kGridSize - 1)};

    std::array<bool, 2> present{true, true};
    std::vector<int> obj_cells = trace.initial_cells;
    int pending_return = -1;  // frame at which the absent agent comes back
    int absent_agent = -1;
    bool selected_moved_this_clip = false;

    for (std::size_t t = 0; t < cfg.t_len; ++t) {
        if (t % kClipLen == 0) selected_moved_this_clip = false;

        if (absent_agent >= 0 && static_cast<int>(t) == pending_return) {
            trace.events.push_back({t, WorldEvent::AgentReturn, absent_agent, -1, -1});
            present[absent_agent] = true;
            absent_agent = -1;
        }
        if (absent_agent < 0 && rng.uniform() < cfg.leave_room_rate && t + 2 < cfg.t_len) {
            absent_agent = static_cast<int>(rng.index(2));
            trace.events.push_back({t, WorldEvent::AgentLeave, absent_agent, -1, -1});
            present[absent_agent] = false;
            pending_return = static_cast<int>(t + 2);
            // a hidden move of the selected object while one agent is away is
            // exactly the Sally-Anne construction
            if (!selected_moved_this_clip && rng.uniform() < cfg.false_belief_rate) {
                const int to = static_cast<int>(rng.index(kGridSize * kGridSize));
                trace.events.push_back({t, WorldEvent::MoveObject, -1, 0, to});
                obj_cells[0] = to;
                selected_moved_this_clip = true;
            }
        }
        if (rng.uniform() < cfg.move_rate) {
            const int obj = static_cast<int>(rng.index(cfg.object_count));
            if (obj != 0 || !selected_moved_this_clip) {
                int to;
                if (obj == 0 && obj_cells[0] < 0) {
                    // the selected object was taken out of the room, bring it
                    // back so its believed location occurs again
                    to = static_cast<int>(rng.index(kGridSize * kGridSize));
                } else if (obj == 0 && cfg.mode == DatasetMode::Tbd &&
                           rng.uniform() < 0.3) {
                    to = -1;  // carried out of the room, beliefs see a disappearance
                } else {
                    to = static_cast<int>(rng.index(kGridSize * kGridSize));
                }
                trace.events.push_back({t, WorldEvent::MoveObject, -1, obj, to});
                obj_cells[obj] = to;
                if (obj == 0) selected_moved_this_clip = true;
            }
        }
        if (rng.uniform() < cfg.joint_attend_rate) {
            trace.events.push_back({t, WorldEvent::JointAttend, -1, 0, obj_cells[0]});
        } else if (rng.uniform() < cfg.attend_rate) {
            const int agent = static_cast<int>(rng.index(2));
            const int obj = static_cast<int>(rng.index(cfg.object_count));
            if (obj_cells[obj] >= 0)
                trace.events.push_back({t, WorldEvent::Attend, agent, obj, obj_cells[obj]});
        }
        if (cfg.mode == DatasetMode::Boss && rng.uniform() < cfg.move_rate) {
            const int target = static_cast<int>(rng.index(cfg.object_count));
            trace.events.push_back({t, WorldEvent::SwitchTarget, -1, target, -1});
        }
    }
    return trace;
}

}  // namespace sim_detail

inline GeneratedEpisode generate_episode(const SyntheticConfig& cfg, std::uint64_t ep_seed,
                                         const std::string& id,
                                         const std::vector<float>& corpus_ocr) {
    Rng rng(ep_seed);
    GeneratedEpisode out;
    Episode& ep = out.episode;
    ep.id = id;
    ep.mode = cfg.mode;
    ep.t_len = cfg.t_len;
    ep.frame_h = ep.frame_w = cfg.frame_size;
    ep.gaze_dim = cfg.mode == DatasetMode::Boss ? 3 : 2;
    ep.pose_coord_dim = cfg.mode == DatasetMode::Boss ? 3 : 2;
    out.trace = sim_detail::simulate_events(cfg, rng);
    const WorldTrace& trace = out.trace;

    const std::size_t h = ep.frame_h, w = ep.frame_w;
    const std::size_t fpix = 3 * h * w;
    ep.frames.assign(cfg.t_len * fpix, 0.05f);
    ep.boxes.assign(cfg.t_len * kBoxSlots * kBoxFields, 0.0f);
    for (int p = 0; p < 2; ++p) {
        ep.gaze[p].assign(cfg.t_len * ep.gaze_dim, 0.0f);
        ep.pose[p].assign(cfg.t_len * kPoseJoints * ep.pose_coord_dim, 0.0f);
        if (cfg.mode == DatasetMode::Tbd) ep.ego[p].assign(cfg.t_len * fpix, 0.05f);
    }
    if (cfg.mode == DatasetMode::Boss) {
        ep.ocr.resize(cfg.t_len * kNumObjectClasses * kNumObjectClasses);
        for (std::size_t t = 0; t < cfg.t_len; ++t)
            std::copy(corpus_ocr.begin(), corpus_ocr.end(),
                      ep.ocr.begin() + t * corpus_ocr.size());
    }

    // replay the events frame by frame to render state
    std::vector<int> obj_cells = trace.initial_cells;
    std::array<bool, 2> present{true, true};
    std::array<int, 2> attend_cell{obj_cells[0], obj_cells[0]};
    int target_object = 0;  // boss: what person 1 currently wants
    int p2_belief = trace.object_classes[0];  // boss: person 2's current belief class
    std::size_t ev = 0;
    for (std::size_t t = 0; t < cfg.t_len; ++t) {
        bool joint_now = false;
        for (; ev < trace.events.size() && trace.events[ev].frame == t; ++ev) {
            const WorldEvent& e = trace.events[ev];
            switch (e.type) {
                case WorldEvent::MoveObject: obj_cells[e.object] = e.to_cell; break;
                case WorldEvent::AgentLeave: present[e.agent] = false; break;
                case WorldEvent::AgentReturn: present[e.agent] = true; break;
                case WorldEvent::Attend: attend_cell[e.agent] = e.to_cell; break;
                case WorldEvent::JointAttend:
                    if (obj_cells[0] >= 0) attend_cell = {obj_cells[0], obj_cells[0]};
                    joint_now = true;
                    break;
                case WorldEvent::SwitchTarget: target_object = e.object; break;
            }
        }
        if (cfg.mode == DatasetMode::Boss) {
            // the communicator gazes at the intended object; the partner joins
            // on joint attention, which is when their belief updates
            attend_cell[0] = obj_cells[target_object];
            if (joint_now) attend_cell[1] = obj_cells[target_object];
        }

        // frames and boxes
        const double step = static_cast<double>(cfg.frame_size) / kGridSize;
        for (std::size_t o = 0; o < obj_cells.size(); ++o) {
            if (obj_cells[o] < 0) continue;  // out of the room, no blob or box
            double cx, cy;
            sim_detail::cell_center(obj_cells[o], cfg.frame_size, cx, cy);
            float r, g, b;
            sim_detail::class_color(trace.object_classes[o], r, g, b);
            sim_detail::draw_blob(ep.frames, t, h, w, cx, cy, r, g, b);
            const std::size_t slot = static_cast<std::size_t>(trace.object_classes[o]);
            float* box = ep.boxes.data() + (t * kBoxSlots + slot) * kBoxFields;
            box[0] = static_cast<float>((cx - step / 2) / cfg.frame_size);
            box[1] = static_cast<float>((cy - step / 2) / cfg.frame_size);
            box[2] = static_cast<float>((cx + step / 2) / cfg.frame_size);
            box[3] = static_cast<float>((cy + step / 2) / cfg.frame_size);
            box[4] = 1.0f;
        }
        for (int p = 0; p < 2; ++p) {
            if (!present[p]) continue;
            double ax, ay;
            sim_detail::cell_center(trace.agent_cells[p], cfg.frame_size, ax, ay);
            sim_detail::draw_blob(ep.frames, t, h, w, ax, ay, 0.9f, 0.9f, 0.9f);
        }

        // gaze, pose, ego views
        for (int p = 0; p < 2; ++p) {
            double ax, ay, tx, ty;
            sim_detail::cell_center(trace.agent_cells[p], cfg.frame_size, ax, ay);
            sim_detail::cell_center(attend_cell[p], cfg.frame_size, tx, ty);
            double dx = tx - ax, dy = ty - ay;
            const double norm = std::sqrt(dx * dx + dy * dy) + 1e-9;
            dx /= norm;
            dy /= norm;
            float* gz = ep.gaze[p].data() + t * ep.gaze_dim;
            gz[0] = static_cast<float>(dx + rng.normal(0.0, 0.05));
            gz[1] = static_cast<float>(dy + rng.normal(0.0, 0.05));
            if (ep.gaze_dim == 3) gz[2] = static_cast<float>(0.5 + rng.normal(0.0, 0.05));

            const double angle = std::atan2(dy, dx);
            const double ca = std::cos(angle), sa = std::sin(angle);
            const auto& tmpl = sim_detail::pose_template();
            float* pj = ep.pose[p].data() + t * kPoseJoints * ep.pose_coord_dim;
            for (std::size_t j = 0; j < kPoseJoints; ++j) {
                const double px = tmpl[j][0] * ca;  // rotate the lateral axis
                const double pz = tmpl[j][0] * sa;
                const double py = tmpl[j][1];
                pj[j * ep.pose_coord_dim + 0] = static_cast<float>(px);
                pj[j * ep.pose_coord_dim + 1] = static_cast<float>(py);
                if (ep.pose_coord_dim == 3) pj[j * ep.pose_coord_dim + 2] =
                    static_cast<float>(pz);
            }
            if (cfg.mode == DatasetMode::Tbd && present[p]) {
                // first-person view: the attended neighborhood, brightened
                double cx2, cy2;
                sim_detail::cell_center(attend_cell[p], cfg.frame_size, cx2, cy2);
                std::copy(ep.frames.begin() + t * fpix, ep.frames.begin() + (t + 1) * fpix,
                          ep.ego[p].begin() + t * fpix);
                sim_detail::draw_blob(ep.ego[p], t, h, w, cx2, cy2, 1.0f, 1.0f, 1.0f);
            }
        }

        // boss labels: person 1 intends the current target; person 2 adopts it
        // on joint attention
        if (cfg.mode == DatasetMode::Boss) {
            if (joint_now) p2_belief = trace.object_classes[target_object];
            ep.boss_labels[0].push_back(trace.object_classes[target_object]);
            ep.boss_labels[1].push_back(p2_belief);
        }
    }

    if (cfg.mode == DatasetMode::Tbd)
        derive_tbd_labels(trace, cfg.t_len, ep.tbd_labels, ep.fb_flags);

    ep.validate();
    return out;
}

inline std::uint64_t episode_seed(std::uint64_t corpus_seed, std::size_t index) {
    // splitmix64 step keeps per-episode streams independent
    std::uint64_t z = corpus_seed + 0x9e3779b97f4a7c15ull * (index + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

struct GeneratedCorpus {
    std::vector<GeneratedEpisode> episodes;
    std::vector<float> ocr;  // corpus-level 27x27, row-normalized
    SplitSpec splits;        // indices as names, filled by save_corpus
};

inline GeneratedCorpus generate_synthetic(const SyntheticConfig& cfg) {
    cfg.validate();
    GeneratedCorpus corpus;
    // first pass: simulate to collect co-occurrence statistics for the OCR
    std::vector<double> cooc(kNumObjectClasses * kNumObjectClasses, 0.0);
    std::vector<std::vector<int>> per_ep_classes;
    for (std::size_t e = 0; e < cfg.episode_count; ++e) {
        Rng rng(episode_seed(cfg.seed, e));
        WorldTrace trace = sim_detail::simulate_events(cfg, rng);
        per_ep_classes.push_back(trace.object_classes);
        for (int a : trace.object_classes)
            for (int b : trace.object_classes)
                cooc[a * kNumObjectClasses + b] += 1.0;
    }
    corpus.ocr.assign(kNumObjectClasses * kNumObjectClasses, 0.0f);
    for (std::size_t i = 0; i < kNumObjectClasses; ++i) {
        double row = 0;
        for (std::size_t j = 0; j < kNumObjectClasses; ++j)
            row += cooc[i * kNumObjectClasses + j];
        for (std::size_t j = 0; j < kNumObjectClasses; ++j)
            corpus.ocr[i * kNumObjectClasses + j] =
                row > 0 ? static_cast<float>(cooc[i * kNumObjectClasses + j] / row)
                        : (i == j ? 1.0f : 0.0f);
    }
    for (std::size_t e = 0; e < cfg.episode_count; ++e) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "ep_%04zu", e);
        corpus.episodes.push_back(
            generate_episode(cfg, episode_seed(cfg.seed, e), buf, corpus.ocr));
    }
    return corpus;
}

// 70/15/15 split by index, deterministic.
inline SplitSpec default_splits(const std::vector<std::string>& paths) {
    SplitSpec s;
    const std::size_t n = paths.size();
    const std::size_t n_train = std::max<std::size_t>(1, (n * 7) / 10);
    const std::size_t n_val = std::max<std::size_t>(1, (n - n_train) / 2);
    for (std::size_t i = 0; i < n; ++i) {
        if (i < n_train) s.train.push_back(paths[i]);
        else if (i < n_train + n_val) s.val.push_back(paths[i]);
        else s.test.push_back(paths[i]);
    }
    if (s.test.empty()) s.test = s.val;
    return s;
}

// ---- clips ----

struct Clip {
    const Episode* episode = nullptr;
    std::size_t start = 0;                        // first frame index
    std::array<std::int32_t, kNumMinds> labels{};
    std::array<std::int32_t, kNumMinds> flags{};
};

inline std::vector<Clip> make_clips(const Episode& ep, bool* warned_remainder = nullptr) {
    if (ep.mode != DatasetMode::Tbd) throw DataError("make_clips: episode is not tbd mode");
    if (ep.t_len < kClipLen)
        throw DataError("make_clips: episode shorter than clip length " +
                        std::to_string(kClipLen));
    if (warned_remainder) *warned_remainder = ep.t_len % kClipLen != 0;
    std::vector<Clip> clips;
    for (std::size_t c = 0; c < ep.clip_count(); ++c) {
        Clip clip;
        clip.episode = &ep;
        clip.start = c * kClipLen;
        for (std::size_t m = 0; m < kNumMinds; ++m) {
            clip.labels[m] = ep.tbd_labels[c * kNumMinds + m];
            clip.flags[m] = ep.fb_flags[c * kNumMinds + m];
        }
        clips.push_back(clip);
    }
    return clips;
}

// ---- normalization ----

// Idempotent canonicalization: frames to [0,1], boxes to [0,1], unit gaze,
// pose centered on the pelvis midpoint (hip joints 11/12) and scaled by
// skeleton height.
inline Episode normalize_features(const Episode& input) {
    Episode ep = input;
    if (ep.frame_h == 0 || ep.frame_w == 0) throw DataError("normalize: zero-extent frames");
    auto rescale_pixels = [](std::vector<float>& px) {
        float mx = 0;
        for (float v : px) mx = std::max(mx, v);
        if (mx > 1.0f)
            for (auto& v : px) v /= 255.0f;
    };
    rescale_pixels(ep.frames);
    for (int p = 0; p < 2; ++p) rescale_pixels(ep.ego[p]);

    float bmax = 0;
    for (std::size_t i = 0; i + kBoxFields <= ep.boxes.size(); i += kBoxFields)
        for (std::size_t k = 0; k < 4; ++k) bmax = std::max(bmax, ep.boxes[i + k]);
    if (bmax > 1.0f) {
        const float sx = static_cast<float>(ep.frame_w);
        const float sy = static_cast<float>(ep.frame_h);
        for (std::size_t i = 0; i + kBoxFields <= ep.boxes.size(); i += kBoxFields) {
            ep.boxes[i + 0] /= sx;
            ep.boxes[i + 1] /= sy;
            ep.boxes[i + 2] /= sx;
            ep.boxes[i + 3] /= sy;
        }
    }

    for (int p = 0; p < 2; ++p) {
        for (std::size_t t = 0; t < ep.t_len; ++t) {
            float* g = ep.gaze[p].data() + t * ep.gaze_dim;
            double norm = 0;
            for (std::size_t k = 0; k < ep.gaze_dim; ++k) norm += g[k] * g[k];
            norm = std::sqrt(norm);
            // skip vectors that are already unit length, keeps reruns byte-stable
            if (norm > 1e-9 && std::abs(norm - 1.0) > 1e-6)
                for (std::size_t k = 0; k < ep.gaze_dim; ++k)
                    g[k] = static_cast<float>(g[k] / norm);
        }
        const std::size_t cd = ep.pose_coord_dim;
        for (std::size_t t = 0; t < ep.t_len; ++t) {
            float* j = ep.pose[p].data() + t * kPoseJoints * cd;
            float root[3] = {0, 0, 0};
            for (std::size_t k = 0; k < cd; ++k)
                root[k] = 0.5f * (j[11 * cd + k] + j[12 * cd + k]);
            float ymin = j[1], ymax = j[1];
            for (std::size_t q = 0; q < kPoseJoints; ++q) {
                ymin = std::min(ymin, j[q * cd + 1]);
                ymax = std::max(ymax, j[q * cd + 1]);
            }
            const float height = ymax - ymin;
            const bool rescale = height > 1e-6f && std::abs(height - 1.0f) > 1e-5f;
            for (std::size_t q = 0; q < kPoseJoints; ++q)
                for (std::size_t k = 0; k < cd; ++k) {
                    j[q * cd + k] -= root[k];
                    if (rescale) j[q * cd + k] /= height;
                }
        }
    }
    return ep;
}

}  // namespace mtom
