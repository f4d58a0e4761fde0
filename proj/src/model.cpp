#include "dmamba/model.hpp"

#include <cmath>
#include <fstream>

#include "dmamba/binio.hpp"
#include "dmamba/ops.hpp"

namespace dmamba {

void ModelConfig::validate() const {
    if (input_height < 1 || input_width < 1) throw ValueError("config: input extents must be positive");
    if (patch_size < 1) throw ValueError("config: patch_size must be positive");
    if (base_dim < 2 || base_dim % 2 != 0) {
        throw ValueError("config: base_dim must be even (channel split), got " +
                         std::to_string(base_dim));
    }
    if (stage_depths.empty()) throw ValueError("config: stage_depths must be non-empty");
    for (int64_t d : stage_depths)
        if (d < 1) throw ValueError("config: stage depths must be >= 1");
    if (state_size < 1) throw ValueError("config: state_size must be >= 1");
    if (num_classes < 2) throw ValueError("config: num_classes must be >= 2");
    // Every stage's dim must stay even; doubling preserves that.
}

Tensor ParamRegistry::add_param(const std::string& name, Tensor t) {
    t.set_requires_grad(true);
    items_.push_back({name, t, true});
    return t;
}

Tensor ParamRegistry::add_buffer(const std::string& name, Tensor t) {
    items_.push_back({name, t, false});
    return t;
}

std::vector<Tensor> ParamRegistry::trainable_tensors() const {
    std::vector<Tensor> out;
    for (const auto& item : items_)
        if (item.trainable) out.push_back(item.tensor);
    return out;
}

Tensor ParamRegistry::find(const std::string& name) const {
    for (const auto& item : items_)
        if (item.name == name) return item.tensor;
    return Tensor();
}

namespace {

Tensor kaiming_uniform(Shape shape, int64_t fan_in, Rng& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    Tensor t(std::move(shape));
    for (double& v : t.data()) v = rng.uniform(-bound, bound);
    return t;
}

Tensor bias_uniform(int64_t out, int64_t fan_in, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    Tensor t(Shape{out});
    for (double& v : t.data()) v = rng.uniform(-bound, bound);
    return t;
}

}  // namespace

LinearLayer::LinearLayer(const std::string& prefix, ParamRegistry& reg, int64_t in, int64_t out,
                         Rng& rng) {
    w = reg.add_param(prefix + ".w", kaiming_uniform({out, in}, in, rng));
    b = reg.add_param(prefix + ".b", bias_uniform(out, in, rng));
}

ConvLayer::ConvLayer(const std::string& prefix, ParamRegistry& reg, int64_t in, int64_t out,
                     int64_t k, int64_t stride, int64_t padding, int64_t groups, Rng& rng,
                     bool with_bias) {
    const int64_t fan_in = (in / groups) * k * k;
    p.kernel = reg.add_param(prefix + ".kernel", kaiming_uniform({out, in / groups, k, k}, fan_in, rng));
    if (with_bias) p.bias = reg.add_param(prefix + ".bias", bias_uniform(out, fan_in, rng));
    p.stride = stride;
    p.padding = padding;
    p.groups = groups;
}

BatchNormLayer::BatchNormLayer(const std::string& prefix, ParamRegistry& reg, int64_t channels) {
    p.gamma = reg.add_param(prefix + ".gamma", Tensor(Shape{channels}, 1.0));
    p.beta = reg.add_param(prefix + ".beta", Tensor(Shape{channels}, 0.0));
    p.running_mean = reg.add_buffer(prefix + ".running_mean", Tensor(Shape{channels}, 0.0));
    p.running_var = reg.add_buffer(prefix + ".running_var", Tensor(Shape{channels}, 1.0));
}

LayerNormLayer::LayerNormLayer(const std::string& prefix, ParamRegistry& reg, int64_t channels) {
    p.gamma = reg.add_param(prefix + ".gamma", Tensor(Shape{channels}, 1.0));
    p.beta = reg.add_param(prefix + ".beta", Tensor(Shape{channels}, 0.0));
}

ConvBranch::ConvBranch(const std::string& prefix, ParamRegistry& reg, int64_t channels, Rng& rng)
    : bn1(prefix + ".bn1", reg, channels),
      bn2(prefix + ".bn2", reg, channels),
      bn3(prefix + ".bn3", reg, channels),
      conv1(prefix + ".conv1", reg, channels, channels, 3, 1, 1, 1, rng, /*with_bias=*/false),
      conv2(prefix + ".conv2", reg, channels, channels, 3, 1, 1, 1, rng, /*with_bias=*/false),
      pw(prefix + ".pw", reg, channels, channels, 1, 1, 0, 1, rng) {}

Tensor ConvBranch::forward(const Tensor& x, NormMode mode) {
    Tensor c = permute_layout(x, Layout::channels_first);
    c = bn1.forward(c, mode);
    c = relu(bn2.forward(conv1.forward(c), mode));
    c = relu(bn3.forward(conv2.forward(c), mode));
    c = relu(pw.forward(c));
    return permute_layout(c, Layout::channels_last);
}

SSMBranch::SSMBranch(const std::string& prefix, ParamRegistry& reg, int64_t channels,
                     int64_t state, bool d_skip, Rng& rng)
    : ln1(prefix + ".ln1", reg, channels),
      ln2(prefix + ".ln2", reg, channels),
      lin_in(prefix + ".lin_in", reg, channels, channels, rng),
      lin_gate(prefix + ".lin_gate", reg, channels, channels, rng),
      lin_out(prefix + ".lin_out", reg, channels, channels, rng),
      dwconv(prefix + ".dwconv", reg, channels, channels, 3, 1, 1, channels, rng) {
    ss2d = make_ss2d_weights(channels, state, rng, d_skip);
    for (auto& [name, tensor] : ss2d.named_params(prefix + ".ss2d")) reg.add_param(name, tensor);
}

Tensor SSMBranch::forward(const Tensor& x) {
    Tensor xbar = ln1.forward(x);
    Tensor s = lin_in.forward(xbar);
    s = permute_layout(s, Layout::channels_first);
    s = dwconv.forward(s);
    s = permute_layout(s, Layout::channels_last);
    s = silu(s);
    s = ss2d_forward(s, ss2d);
    s = ln2.forward(s);
    Tensor gate = silu(lin_gate.forward(xbar));
    return lin_out.forward(mul(s, gate));
}

SSConvSSMBlock::SSConvSSMBlock(const std::string& prefix, ParamRegistry& reg, int64_t channels,
                               int64_t state, bool d_skip, Rng& rng) {
    if (channels % 2 != 0) {
        throw ValueError("block channels must be even, got " + std::to_string(channels));
    }
    conv_branch = ConvBranch(prefix + ".conv", reg, channels / 2, rng);
    ssm_branch = SSMBranch(prefix + ".ssm", reg, channels / 2, state, d_skip, rng);
}

Tensor SSConvSSMBlock::forward(const Tensor& x, NormMode mode) {
    auto [x1, x2] = channel_split(x);
    Tensor local = conv_branch.forward(x1, mode);
    Tensor global = ssm_branch.forward(x2);
    return add(x, channel_shuffle(channel_concat(local, global), 2));
}

PatchMerging::PatchMerging(const std::string& prefix, ParamRegistry& reg, int64_t channels,
                           Rng& rng)
    : ln(prefix + ".ln", reg, 4 * channels),
      proj(prefix + ".proj", reg, 4 * channels, 2 * channels, rng) {}

Tensor PatchMerging::forward(const Tensor& x) const {
    return proj.forward(ln.forward(space_to_depth2(x)));
}

Model::Model(const ModelConfig& cfg, uint64_t init_seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(init_seed);
    patch_embed_ = ConvLayer("patch_embed", reg_, 1, cfg_.base_dim, cfg_.patch_size,
                             cfg_.patch_size, 0, 1, rng);
    int64_t dim = cfg_.base_dim;
    const size_t n_stages = cfg_.stage_depths.size();
    for (size_t si = 0; si < n_stages; ++si) {
        std::vector<SSConvSSMBlock> blocks;
        for (int64_t bi = 0; bi < cfg_.stage_depths[si]; ++bi) {
            blocks.emplace_back("stage" + std::to_string(si) + ".block" + std::to_string(bi), reg_,
                                dim, cfg_.state_size, cfg_.d_skip, rng);
        }
        stages_.push_back(std::move(blocks));
        if (si + 1 < n_stages) {
            merges_.emplace_back("stage" + std::to_string(si) + ".merge", reg_, dim, rng);
            dim *= 2;
        }
    }
    head_ = LinearLayer("head", reg_, dim, cfg_.num_classes, rng);
}

Tensor Model::forward(const Tensor& x, NormMode mode) {
    if (x.rank() != 4 || x.extent(3) != 1) {
        throw ShapeError("model input must be [B,H,W,1], got " + shape_to_string(x.shape()));
    }
    if (x.extent(1) != cfg_.input_height || x.extent(2) != cfg_.input_width) {
        // Any spatial size works as long as it was configured; catch the
        // mismatch early so checkpoints stay honest about their input shape.
        throw ShapeError("model input " + shape_to_string(x.shape()) + " does not match config " +
                         std::to_string(cfg_.input_height) + "x" + std::to_string(cfg_.input_width));
    }
    const int64_t ps = cfg_.patch_size;
    const int64_t pad_h = (ps - x.extent(1) % ps) % ps;
    const int64_t pad_w = (ps - x.extent(2) % ps) % ps;
    Tensor h = (pad_h || pad_w) ? pad_spatial_end(x, pad_h, pad_w) : x;
    h = permute_layout(h, Layout::channels_first);
    h = patch_embed_.forward(h);
    h = permute_layout(h, Layout::channels_last);
    for (size_t si = 0; si < stages_.size(); ++si) {
        for (auto& block : stages_[si]) h = block.forward(h, mode);
        if (si < merges_.size()) h = merges_[si].forward(h);
    }
    return head_.forward(adaptive_global_avg_pool(h));
}

std::vector<std::pair<std::string, Tensor>> Model::named_parameters() const {
    std::vector<std::pair<std::string, Tensor>> out;
    for (const auto& item : reg_.items())
        if (item.trainable) out.emplace_back(item.name, item.tensor);
    return out;
}

void Model::zero_grad() const {
    for (const auto& item : reg_.items())
        if (item.trainable) item.tensor.zero_grad();
}

std::vector<std::vector<double>> Model::snapshot_values() const {
    std::vector<std::vector<double>> out;
    out.reserve(reg_.items().size());
    for (const auto& item : reg_.items()) out.push_back(item.tensor.data());
    return out;
}

void Model::restore_values(const std::vector<std::vector<double>>& values) const {
    if (values.size() != reg_.items().size()) throw ValueError("snapshot does not match model");
    for (size_t i = 0; i < values.size(); ++i) {
        if (values[i].size() != reg_.items()[i].tensor.data().size()) {
            throw ValueError("snapshot tensor size mismatch at " + reg_.items()[i].name);
        }
        reg_.items()[i].tensor.data() = values[i];
    }
}

int64_t count_params(const Model& m) {
    int64_t n = 0;
    for (const auto& item : m.registry().items())
        if (item.trainable) n += item.tensor.numel();
    return n;
}

namespace {
constexpr char kCheckpointMagic[4] = {'D', 'M', 'C', 'K'};
constexpr uint32_t kCheckpointVersion = 1;
}  // namespace

void save_checkpoint(const Model& m, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open " + path.string() + " for writing");
    binio::write_magic(os, kCheckpointMagic);
    binio::write_u32(os, kCheckpointVersion);
    const ModelConfig& c = m.config();
    binio::write_u32(os, static_cast<uint32_t>(c.input_height));
    binio::write_u32(os, static_cast<uint32_t>(c.input_width));
    binio::write_u32(os, static_cast<uint32_t>(c.patch_size));
    binio::write_u32(os, static_cast<uint32_t>(c.base_dim));
    binio::write_u32(os, static_cast<uint32_t>(c.state_size));
    binio::write_u32(os, static_cast<uint32_t>(c.num_classes));
    binio::write_u32(os, static_cast<uint32_t>(c.stage_depths.size()));
    for (int64_t d : c.stage_depths) binio::write_u32(os, static_cast<uint32_t>(d));
    os.put(c.d_skip ? 1 : 0);

    const auto& items = m.registry().items();
    binio::write_u32(os, static_cast<uint32_t>(items.size()));
    for (const auto& item : items) {
        binio::write_u32(os, static_cast<uint32_t>(item.name.size()));
        os.write(item.name.data(), static_cast<std::streamsize>(item.name.size()));
        binio::write_u32(os, static_cast<uint32_t>(item.tensor.rank()));
        for (int64_t e : item.tensor.shape()) binio::write_u64(os, static_cast<uint64_t>(e));
        for (double v : item.tensor.data()) binio::write_f64(os, v);
    }
    if (!os) throw IoError("write failed for " + path.string());
}

Model load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path.string());
    binio::expect_magic(is, kCheckpointMagic, "checkpoint");
    const uint32_t version = binio::read_u32(is, "checkpoint version");
    if (version != kCheckpointVersion) {
        throw FormatError("unsupported checkpoint version " + std::to_string(version));
    }
    ModelConfig c;
    c.input_height = binio::read_u32(is, "input_height");
    c.input_width = binio::read_u32(is, "input_width");
    c.patch_size = binio::read_u32(is, "patch_size");
    c.base_dim = binio::read_u32(is, "base_dim");
    c.state_size = binio::read_u32(is, "state_size");
    c.num_classes = binio::read_u32(is, "num_classes");
    const uint32_t n_stages = binio::read_u32(is, "stage count");
    c.stage_depths.clear();
    for (uint32_t i = 0; i < n_stages; ++i)
        c.stage_depths.push_back(binio::read_u32(is, "stage depth"));
    int skip_byte = is.get();
    if (skip_byte == EOF) throw TruncationError("file truncated while reading d_skip flag");
    c.d_skip = skip_byte != 0;

    Model m(c, 0);
    const uint32_t count = binio::read_u32(is, "tensor count");
    if (count != m.registry().items().size()) {
        throw FormatError("checkpoint lists " + std::to_string(count) + " tensors, model has " +
                          std::to_string(m.registry().items().size()));
    }
    for (uint32_t i = 0; i < count; ++i) {
        const uint32_t name_len = binio::read_u32(is, "tensor name length");
        const std::string name = binio::read_string(is, name_len, "tensor name");
        Tensor t = m.registry().find(name);
        if (!t.defined()) throw FormatError("checkpoint contains unknown tensor " + name);
        const uint32_t rank = binio::read_u32(is, "tensor rank");
        Shape shape;
        for (uint32_t r = 0; r < rank; ++r)
            shape.push_back(static_cast<int64_t>(binio::read_u64(is, "tensor extent")));
        if (shape != t.shape()) {
            throw ExtentError("stored extents " + shape_to_string(shape) + " for " + name +
                              " do not match model extents " + shape_to_string(t.shape()));
        }
        for (double& v : t.data()) v = binio::read_f64(is, "tensor payload");
    }
    return m;
}

}  // namespace dmamba
