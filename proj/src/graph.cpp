#include "acnorm/graph.hpp"

#include <algorithm>
#include <cmath>

#include "acnorm/rng.hpp"
#include "json.hpp"

namespace acnorm {

using nlohmann::json;

std::string ArchSpec::canonical() const {
    json j;
    j["task"] = task;
    j["image_size"] = image_size;
    j["in_channels"] = in_channels;
    j["widths"] = widths;
    j["n_classes"] = n_classes;
    j["kernel"] = kernel;
    return j.dump();
}

ArchSpec ArchSpec::from_canonical(const std::string& s) {
    json j = json::parse(s);
    ArchSpec a;
    a.task = j.at("task").get<std::string>();
    a.image_size = j.at("image_size").get<int>();
    a.in_channels = j.at("in_channels").get<int>();
    a.widths = j.at("widths").get<std::vector<int>>();
    a.n_classes = j.at("n_classes").get<int>();
    a.kernel = j.at("kernel").get<int>();
    a.validate();
    return a;
}

void ArchSpec::validate() const {
    if (task != "segmentation" && task != "classification")
        throw SpecError("ArchSpec: task must be segmentation or classification");
    if (widths.empty()) throw SpecError("ArchSpec: at least one encoder width required");
    for (int w : widths)
        if (w < 1) throw SpecError("ArchSpec: widths must be positive");
    if (kernel != 1 && kernel != 3) throw SpecError("ArchSpec: kernel must be 1 or 3");
    if (in_channels < 1 || n_classes < 1) throw SpecError("ArchSpec: channel counts must be positive");
    int size = image_size;
    for (std::size_t i = 0; i < widths.size(); ++i) {
        if (size % 2 != 0)
            throw SpecError("ArchSpec: image_size must be divisible by 2^len(widths)");
        size /= 2;
    }
    if (size < 1) throw SpecError("ArchSpec: image too small for this depth");
}

std::vector<LayerDesc> layout_from_arch(const ArchSpec& arch) {
    arch.validate();
    std::vector<LayerDesc> layers;
    const int m = int(arch.widths.size());

    int ch = arch.in_channels;
    for (int i = 0; i < m; ++i) {
        const std::string base = "encoder.block" + std::to_string(i);
        LayerDesc conv{};
        conv.kind = LayerKind::conv;
        conv.name = base + ".conv";
        conv.in_ch = ch;
        conv.out_ch = arch.widths[i];
        conv.ksize = arch.kernel;
        layers.push_back(conv);
        ch = arch.widths[i];

        LayerDesc norm{};
        norm.kind = LayerKind::norm;
        norm.name = base + ".norm";
        norm.channels = ch;
        layers.push_back(norm);

        LayerDesc act{};
        act.kind = LayerKind::activation;
        act.name = base + ".act";
        act.act = ActKind::relu;
        layers.push_back(act);

        LayerDesc pool{};
        pool.kind = LayerKind::pool;
        pool.name = base + ".pool";
        layers.push_back(pool);
    }

    if (arch.task == "segmentation") {
        // Mirrored decoder: one upsample+conv block per pool, widths walked
        // back down to widths[0].
        std::vector<int> dec;
        for (int i = m - 2; i >= 0; --i) dec.push_back(arch.widths[i]);
        dec.push_back(arch.widths[0]);
        for (int i = 0; i < m; ++i) {
            const std::string base = "decoder.block" + std::to_string(i);
            LayerDesc up{};
            up.kind = LayerKind::upsample;
            up.name = base + ".up";
            layers.push_back(up);

            LayerDesc conv{};
            conv.kind = LayerKind::conv;
            conv.name = base + ".conv";
            conv.in_ch = ch;
            conv.out_ch = dec[i];
            conv.ksize = arch.kernel;
            layers.push_back(conv);
            ch = dec[i];

            LayerDesc norm{};
            norm.kind = LayerKind::norm;
            norm.name = base + ".norm";
            norm.channels = ch;
            layers.push_back(norm);

            LayerDesc act{};
            act.kind = LayerKind::activation;
            act.name = base + ".act";
            act.act = ActKind::relu;
            layers.push_back(act);
        }
        LayerDesc head{};
        head.kind = LayerKind::conv;
        head.name = "head.conv";
        head.in_ch = ch;
        head.out_ch = arch.n_classes;
        head.ksize = 1;
        layers.push_back(head);
    } else {
        LayerDesc gap{};
        gap.kind = LayerKind::global_pool;
        gap.name = "head.gap";
        layers.push_back(gap);

        LayerDesc fc{};
        fc.kind = LayerKind::dense;
        fc.name = "head.fc";
        fc.in_dim = ch;
        fc.out_dim = arch.n_classes;
        layers.push_back(fc);
    }
    return layers;
}

Tensor& ModelGraph::param(const std::string& name) {
    auto it = params.find(name);
    if (it == params.end()) throw SpecError("unknown parameter: " + name);
    return it->second;
}

const Tensor& ModelGraph::param(const std::string& name) const {
    auto it = params.find(name);
    if (it == params.end()) throw SpecError("unknown parameter: " + name);
    return it->second;
}

bool is_head_param(const std::string& name) { return name.rfind("head.", 0) == 0; }

std::vector<std::string> norm_param_names(const std::string& layer_name, NormKind kind) {
    std::vector<std::string> names = {
        layer_name + ".gamma",
        layer_name + ".beta",
        layer_name + ".moving_mean",
        layer_name + ".moving_var",
    };
    if (kind != NormKind::vanilla_bn) {
        names.push_back(layer_name + ".src_gamma");
        names.push_back(layer_name + ".src_beta");
        names.push_back(layer_name + ".src_moving_mean");
        names.push_back(layer_name + ".src_moving_var");
    }
    if (kind == NormKind::ac_trainable_c) names.push_back(layer_name + ".c_opt");
    return names;
}

namespace {

// Head layers use a gentler fan-in scale than hidden convs so freshly
// attached heads neither blow up the initial loss nor choke gradient flow.
void init_conv(ModelGraph& m, const LayerDesc& d, std::uint64_t seed) {
    Rng rng(derive_seed(seed, d.name));
    const std::size_t oc = d.out_ch, ic = d.in_ch, k = d.ksize;
    Tensor w({oc, ic, k, k});
    const double std = is_head_param(d.name) ? std::sqrt(1.0 / double(ic * k * k))
                                             : std::sqrt(2.0 / double(ic * k * k));
    for (std::size_t i = 0; i < w.numel(); ++i) w[i] = rng.normal(0.0, std);
    m.params[d.name + ".w"] = std::move(w);
    m.params[d.name + ".b"] = Tensor({oc}, 0.0);
}

void init_dense(ModelGraph& m, const LayerDesc& d, std::uint64_t seed) {
    Rng rng(derive_seed(seed, d.name));
    Tensor w({std::size_t(d.out_dim), std::size_t(d.in_dim)});
    const double std = std::sqrt(1.0 / double(d.in_dim));
    for (std::size_t i = 0; i < w.numel(); ++i) w[i] = rng.normal(0.0, std);
    m.params[d.name + ".w"] = std::move(w);
    m.params[d.name + ".b"] = Tensor({std::size_t(d.out_dim)}, 0.0);
}

// Affine shifts start on an evenly spaced, seed-permuted grid and scales get
// a small jitter. Per-channel signatures are therefore distinct, spread and
// free of near-duplicates from the very first step; signature gaps must stay
// wide relative to per-epoch affine drift for the calibration to resolve
// them.
void init_norm(ModelGraph& m, const LayerDesc& d, std::uint64_t seed, NormKind kind,
               const ACNormConfig& cfg) {
    Rng rng(derive_seed(seed, d.name));
    const std::size_t k = d.channels;
    const auto perm = rng.permutation(k);
    Tensor gamma({k}), beta({k});
    for (std::size_t j = 0; j < k; ++j) {
        gamma[j] = 1.0 + 0.05 * rng.uniform(-1.0, 1.0);
        beta[j] = -0.30 + 0.60 * (double(perm[j]) + 0.5) / double(k);
    }
    m.params[d.name + ".moving_mean"] = Tensor({k}, 0.0);
    m.params[d.name + ".moving_var"] = Tensor({k}, 1.0);
    if (kind != NormKind::vanilla_bn) {
        m.params[d.name + ".src_gamma"] = gamma;
        m.params[d.name + ".src_beta"] = beta;
        m.params[d.name + ".src_moving_mean"] = Tensor({k}, 0.0);
        m.params[d.name + ".src_moving_var"] = Tensor({k}, 1.0);
    }
    if (kind == NormKind::ac_trainable_c) {
        AffineParams a;
        a.gamma = gamma.vec();
        a.beta = beta.vec();
        ACNormLayerState core = ACNormLayerState::from_source(a, cfg);
        m.params[d.name + ".c_opt"] = initial_trainable_c(core);
    }
    m.params[d.name + ".gamma"] = std::move(gamma);
    m.params[d.name + ".beta"] = std::move(beta);
}

} // namespace

ModelGraph build_model(const ArchSpec& arch, std::uint64_t seed, NormKind norm_kind,
                       ACNormConfig norm_config) {
    norm_config.validate();
    ModelGraph m;
    m.arch = arch;
    m.norm_kind = norm_kind;
    m.init_seed = seed;
    m.norm_config = norm_config;
    m.layers = layout_from_arch(arch);
    for (auto& d : m.layers)
        if (d.kind == LayerKind::norm) d.norm_kind = norm_kind;

    m.encoder_boundary = 0;
    for (int i = 0; i < int(m.layers.size()); ++i)
        if (m.layers[i].name.rfind("encoder.", 0) == 0) m.encoder_boundary = i;

    for (const auto& d : m.layers) {
        switch (d.kind) {
            case LayerKind::conv: init_conv(m, d, seed); break;
            case LayerKind::dense: init_dense(m, d, seed); break;
            case LayerKind::norm: init_norm(m, d, seed, norm_kind, norm_config); break;
            default: break;
        }
    }
    for (const auto& [name, tensor] : m.params) {
        (void)tensor;
        const bool frozen_buffer = name.find(".moving_") != std::string::npos ||
                                   name.find(".src_") != std::string::npos;
        m.trainable[name] = !frozen_buffer;
    }
    return m;
}

void reinit_head(ModelGraph& model, std::uint64_t seed) {
    for (const auto& d : model.layers) {
        if (d.name.rfind("head.", 0) != 0) continue;
        if (d.kind == LayerKind::conv) init_conv(model, d, derive_seed(seed, "head"));
        if (d.kind == LayerKind::dense) init_dense(model, d, derive_seed(seed, "head"));
    }
}

std::string deepest_encoder_norm(const ModelGraph& model) {
    std::string best;
    for (int i = 0; i <= model.encoder_boundary && i < int(model.layers.size()); ++i)
        if (model.layers[i].kind == LayerKind::norm) best = model.layers[i].name;
    if (best.empty()) throw SpecError("model has no encoder norm layer");
    return best;
}

// ---------------------------------------------------------------------------
// Layer math
// ---------------------------------------------------------------------------

namespace {

Tensor conv2d_forward(const Tensor& x, const Tensor& w, const Tensor& b) {
    const std::size_t B = x.dim(0), IC = x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::size_t OC = w.dim(0), K = w.dim(2);
    const int pad = int(K) / 2;
    Tensor y({B, OC, H, W});
    for (std::size_t bi = 0; bi < B; ++bi)
        for (std::size_t oc = 0; oc < OC; ++oc) {
            const double bias = b[oc];
            double* yrow = &y(bi, oc, 0, 0);
            for (std::size_t i = 0; i < H * W; ++i) yrow[i] = bias;
            for (std::size_t ic = 0; ic < IC; ++ic)
                for (std::size_t ky = 0; ky < K; ++ky)
                    for (std::size_t kx = 0; kx < K; ++kx) {
                        const double wv = w(oc, ic, ky, kx);
                        const int dy = int(ky) - pad, dx = int(kx) - pad;
                        const std::size_t y0 = std::size_t(std::max(0, -dy));
                        const std::size_t y1 = std::size_t(std::min<int>(int(H), int(H) - dy));
                        const std::size_t x0 = std::size_t(std::max(0, -dx));
                        const std::size_t x1 = std::size_t(std::min<int>(int(W), int(W) - dx));
                        for (std::size_t yy = y0; yy < y1; ++yy) {
                            const double* xin = &x(bi, ic, yy + dy, 0);
                            double* yout = &y(bi, oc, yy, 0);
                            for (std::size_t xx = x0; xx < x1; ++xx)
                                yout[xx] += wv * xin[xx + dx];
                        }
                    }
        }
    return y;
}

void conv2d_backward(const Tensor& x, const Tensor& w, const Tensor& dy, Tensor& dx,
                     Tensor& dw, Tensor& db) {
    const std::size_t B = x.dim(0), IC = x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::size_t OC = w.dim(0), K = w.dim(2);
    const int pad = int(K) / 2;
    dx = Tensor({B, IC, H, W});
    dw = Tensor(w.shape());
    db = Tensor({OC});
    for (std::size_t bi = 0; bi < B; ++bi)
        for (std::size_t oc = 0; oc < OC; ++oc) {
            const double* dyrow = &dy(bi, oc, 0, 0);
            double acc = 0.0;
            for (std::size_t i = 0; i < H * W; ++i) acc += dyrow[i];
            db[oc] += acc;
            for (std::size_t ic = 0; ic < IC; ++ic)
                for (std::size_t ky = 0; ky < K; ++ky)
                    for (std::size_t kx = 0; kx < K; ++kx) {
                        const double wv = w(oc, ic, ky, kx);
                        double wgrad = 0.0;
                        const int dyo = int(ky) - pad, dxo = int(kx) - pad;
                        const std::size_t y0 = std::size_t(std::max(0, -dyo));
                        const std::size_t y1 = std::size_t(std::min<int>(int(H), int(H) - dyo));
                        const std::size_t x0 = std::size_t(std::max(0, -dxo));
                        const std::size_t x1 = std::size_t(std::min<int>(int(W), int(W) - dxo));
                        for (std::size_t yy = y0; yy < y1; ++yy) {
                            const double* xin = &x(bi, ic, yy + dyo, 0);
                            double* dxin = &dx(bi, ic, yy + dyo, 0);
                            const double* dyout = &dy(bi, oc, yy, 0);
                            for (std::size_t xx = x0; xx < x1; ++xx) {
                                const double g = dyout[xx];
                                wgrad += g * xin[xx + dxo];
                                dxin[xx + dxo] += g * wv;
                            }
                        }
                        dw(oc, ic, ky, kx) += wgrad;
                    }
        }
}

Tensor maxpool_forward(const Tensor& x, Tensor& argmax) {
    const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::size_t OH = H / 2, OW = W / 2;
    Tensor y({B, C, OH, OW});
    argmax = Tensor({B, C, OH, OW});
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t oy = 0; oy < OH; ++oy)
                for (std::size_t ox = 0; ox < OW; ++ox) {
                    double best = -std::numeric_limits<double>::infinity();
                    std::size_t best_idx = 0;
                    for (std::size_t dy = 0; dy < 2; ++dy)
                        for (std::size_t dx = 0; dx < 2; ++dx) {
                            const std::size_t yy = 2 * oy + dy, xx = 2 * ox + dx;
                            const double v = x(b, c, yy, xx);
                            if (v > best) {
                                best = v;
                                best_idx = ((b * C + c) * H + yy) * W + xx;
                            }
                        }
                    y(b, c, oy, ox) = best;
                    argmax(b, c, oy, ox) = double(best_idx);
                }
    return y;
}

Tensor maxpool_backward(const Tensor& dy, const Tensor& argmax,
                        const std::vector<std::size_t>& in_shape) {
    Tensor dx{in_shape};
    for (std::size_t i = 0; i < dy.numel(); ++i)
        dx[std::size_t(argmax[i])] += dy[i];
    return dx;
}

Tensor upsample_forward(const Tensor& x) {
    const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    Tensor y({B, C, H * 2, W * 2});
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t yy = 0; yy < 2 * H; ++yy)
                for (std::size_t xx = 0; xx < 2 * W; ++xx)
                    y(b, c, yy, xx) = x(b, c, yy / 2, xx / 2);
    return y;
}

Tensor upsample_backward(const Tensor& dy) {
    const std::size_t B = dy.dim(0), C = dy.dim(1), H = dy.dim(2) / 2, W = dy.dim(3) / 2;
    Tensor dx({B, C, H, W});
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t yy = 0; yy < 2 * H; ++yy)
                for (std::size_t xx = 0; xx < 2 * W; ++xx)
                    dx(b, c, yy / 2, xx / 2) += dy(b, c, yy, xx);
    return dx;
}

// B x C x H x W -> (B*H*W) x C
Tensor to_rows(const Tensor& x) {
    const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    Tensor m({B * H * W, C});
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t c = 0; c < C; ++c) {
            const double* src = &x(b, c, 0, 0);
            for (std::size_t i = 0; i < H * W; ++i)
                m((b * H * W) + i, c) = src[i];
        }
    return m;
}

Tensor from_rows_like(const Tensor& m, const Tensor& like) {
    const std::size_t B = like.dim(0), C = like.dim(1), H = like.dim(2), W = like.dim(3);
    Tensor x({B, C, H, W});
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t c = 0; c < C; ++c) {
            double* dst = &x(b, c, 0, 0);
            for (std::size_t i = 0; i < H * W; ++i)
                dst[i] = m((b * H * W) + i, c);
        }
    return x;
}

NormLayerState assemble_norm_state(const ModelGraph& model, const LayerDesc& d, Mode mode) {
    NormLayerState st;
    st.kind = d.norm_kind;
    const std::string& n = d.name;
    st.core.target.gamma = model.param(n + ".gamma").vec();
    st.core.target.beta = model.param(n + ".beta").vec();
    st.core.target.role = Role::target;
    if (model.has_param(n + ".src_gamma")) {
        st.core.source.gamma = model.param(n + ".src_gamma").vec();
        st.core.source.beta = model.param(n + ".src_beta").vec();
        st.src_moving_mean = model.param(n + ".src_moving_mean").vec();
        st.src_moving_var = model.param(n + ".src_moving_var").vec();
    } else {
        st.core.source.gamma = st.core.target.gamma;
        st.core.source.beta = st.core.target.beta;
    }
    st.core.source.role = Role::source;
    st.core.stats = NormStats::fresh(d.channels, model.norm_config.momentum, model.norm_config.eps);
    st.core.stats.moving_mean = model.param(n + ".moving_mean").vec();
    st.core.stats.moving_var = model.param(n + ".moving_var").vec();
    st.core.config = model.norm_config;
    st.core.mode = mode;
    if (model.has_param(n + ".c_opt")) st.c_opt = model.param(n + ".c_opt");
    return st;
}

} // namespace

Tensor model_forward(ModelGraph& model, const Tensor& x, Mode mode,
                     std::vector<LayerCache>* caches, ActivationCapture* capture_pre,
                     ActivationCapture* capture_out) {
    Tensor cur = x;
    if (caches) caches->assign(model.layers.size(), LayerCache{});
    for (std::size_t li = 0; li < model.layers.size(); ++li) {
        const LayerDesc& d = model.layers[li];
        LayerCache* cache = caches ? &(*caches)[li] : nullptr;
        if (capture_pre) (*capture_pre)[d.name] = cur;
        switch (d.kind) {
            case LayerKind::conv: {
                if (cache) cache->input = cur;
                cur = conv2d_forward(cur, model.param(d.name + ".w"), model.param(d.name + ".b"));
                break;
            }
            case LayerKind::norm: {
                NormLayerState st = assemble_norm_state(model, d, mode);
                const Tensor rows = to_rows(cur);
                NormCache local;
                NormCache& nc = cache ? cache->norm : local;
                const Tensor out = variant_forward(rows, st, &nc);
                if (mode == Mode::training) {
                    model.param(d.name + ".moving_mean").vec() = st.core.stats.moving_mean;
                    model.param(d.name + ".moving_var").vec() = st.core.stats.moving_var;
                }
                cur = from_rows_like(out, cur);
                break;
            }
            case LayerKind::activation: {
                if (cache) cache->input = cur;
                Tensor out = cur;
                if (d.act == ActKind::relu)
                    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = std::max(0.0, out[i]);
                cur = std::move(out);
                break;
            }
            case LayerKind::pool: {
                if (cache) {
                    cache->input = cur;
                    cur = maxpool_forward(cache->input, cache->pool_argmax);
                } else {
                    Tensor am;
                    cur = maxpool_forward(cur, am);
                }
                break;
            }
            case LayerKind::upsample: {
                cur = upsample_forward(cur);
                break;
            }
            case LayerKind::global_pool: {
                if (cache) cache->input = cur;
                const std::size_t B = cur.dim(0), C = cur.dim(1), HW = cur.dim(2) * cur.dim(3);
                Tensor out({B, C});
                for (std::size_t b = 0; b < B; ++b)
                    for (std::size_t c = 0; c < C; ++c) {
                        const double* src = &cur(b, c, 0, 0);
                        double s = 0.0;
                        for (std::size_t i = 0; i < HW; ++i) s += src[i];
                        out(b, c) = s / double(HW);
                    }
                cur = std::move(out);
                break;
            }
            case LayerKind::dense: {
                if (cache) cache->input = cur;
                const Tensor& w = model.param(d.name + ".w");
                const Tensor& b = model.param(d.name + ".b");
                const std::size_t B = cur.dim(0), I = cur.dim(1), O = w.dim(0);
                Tensor out({B, O});
                for (std::size_t bi = 0; bi < B; ++bi)
                    for (std::size_t o = 0; o < O; ++o) {
                        double s = b[o];
                        for (std::size_t i = 0; i < I; ++i) s += w(o, i) * cur(bi, i);
                        out(bi, o) = s;
                    }
                cur = std::move(out);
                break;
            }
        }
        if (capture_out) (*capture_out)[d.name] = cur;
    }
    return cur;
}

ParamGrads model_backward(ModelGraph& model, const std::vector<LayerCache>& caches,
                          const Tensor& upstream) {
    if (caches.size() != model.layers.size())
        throw InputError("model_backward: caches missing; run model_forward with caches");
    ParamGrads grads;
    Tensor cur = upstream;
    for (int li = int(model.layers.size()) - 1; li >= 0; --li) {
        const LayerDesc& d = model.layers[li];
        const LayerCache& cache = caches[li];
        switch (d.kind) {
            case LayerKind::conv: {
                Tensor dx, dw, db;
                conv2d_backward(cache.input, model.param(d.name + ".w"), cur, dx, dw, db);
                grads[d.name + ".w"] = std::move(dw);
                grads[d.name + ".b"] = std::move(db);
                cur = std::move(dx);
                break;
            }
            case LayerKind::norm: {
                NormLayerState st = assemble_norm_state(model, d, Mode::training);
                const Tensor rows = to_rows(cur);
                VariantGrads vg = variant_backward(rows, st, cache.norm);
                grads[d.name + ".gamma"] = Tensor({vg.gamma_t.size()});
                grads[d.name + ".gamma"].vec() = vg.gamma_t;
                grads[d.name + ".beta"] = Tensor({vg.beta_t.size()});
                grads[d.name + ".beta"].vec() = vg.beta_t;
                if (d.norm_kind == NormKind::ac_trainable_c && vg.c_opt.numel() > 0)
                    grads[d.name + ".c_opt"] = std::move(vg.c_opt);
                // cur carries the layer's BCHW geometry (norm preserves shape)
                cur = from_rows_like(vg.x, cur);
                break;
            }
            case LayerKind::activation: {
                if (d.act == ActKind::relu) {
                    Tensor dx = cur;
                    for (std::size_t i = 0; i < dx.numel(); ++i)
                        if (cache.input[i] <= 0.0) dx[i] = 0.0;
                    cur = std::move(dx);
                }
                break;
            }
            case LayerKind::pool: {
                cur = maxpool_backward(cur, cache.pool_argmax, cache.input.shape());
                break;
            }
            case LayerKind::upsample: {
                cur = upsample_backward(cur);
                break;
            }
            case LayerKind::global_pool: {
                const Tensor& in = cache.input;
                const std::size_t B = in.dim(0), C = in.dim(1), H = in.dim(2), W = in.dim(3);
                Tensor dx({B, C, H, W});
                for (std::size_t b = 0; b < B; ++b)
                    for (std::size_t c = 0; c < C; ++c) {
                        const double g = cur(b, c) / double(H * W);
                        double* dst = &dx(b, c, 0, 0);
                        for (std::size_t i = 0; i < H * W; ++i) dst[i] = g;
                    }
                cur = std::move(dx);
                break;
            }
            case LayerKind::dense: {
                const Tensor& w = model.param(d.name + ".w");
                const Tensor& in = cache.input;
                const std::size_t B = in.dim(0), I = in.dim(1), O = w.dim(0);
                Tensor dw({O, I}), db({O}), dx({B, I});
                for (std::size_t bi = 0; bi < B; ++bi)
                    for (std::size_t o = 0; o < O; ++o) {
                        const double g = cur(bi, o);
                        db[o] += g;
                        for (std::size_t i = 0; i < I; ++i) {
                            dw(o, i) += g * in(bi, i);
                            dx(bi, i) += g * w(o, i);
                        }
                    }
                grads[d.name + ".w"] = std::move(dw);
                grads[d.name + ".b"] = std::move(db);
                cur = std::move(dx);
                break;
            }
        }
    }
    return grads;
}

} // namespace acnorm
