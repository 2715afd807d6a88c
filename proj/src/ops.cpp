#include "stitchformer/ops.hpp"

#include <cmath>
#include <cstring>
#include <string>
#include <utility>

#include "stitchformer/errors.hpp"

namespace stitchformer {

namespace {

bool any_requires_grad(const std::vector<Tensor>& parents) {
    for (const Tensor& p : parents) {
        if (p.requires_grad()) return true;
    }
    return false;
}

// Builds the output node and, when the tape is live, attaches parents and the
// backprop closure produced by bind.
template <typename Bind>
Tensor finish(const char* op, std::vector<int> shape, std::vector<double> data,
              const std::vector<Tensor>& parents, Bind bind) {
    apply_precision(data);
    check_finite(op, data);
    auto node = std::make_shared<TensorNode>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    if (grad_enabled() && any_requires_grad(parents)) {
        node->requires_grad = true;
        node->parents.reserve(parents.size());
        for (const Tensor& p : parents) node->parents.push_back(p.node_ptr());
        node->backprop = bind(node.get());
    }
    return Tensor(std::move(node));
}

void require(bool cond, const char* op, const std::string& msg) {
    if (!cond) throw ContractError(std::string(op) + ": " + msg);
}

void require_2d(const Tensor& t, const char* op, const char* name) {
    require(t.shape().size() == 2, op, std::string(name) + " must be 2-D, got " + shape_str(t.shape()));
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_b) {
    require_2d(a, "matmul", "a");
    require_2d(b, "matmul", "b");
    const int m = a.shape()[0];
    const int k = a.shape()[1];
    const int n = transpose_b ? b.shape()[0] : b.shape()[1];
    const int bk = transpose_b ? b.shape()[1] : b.shape()[0];
    require(bk == k, "matmul",
            "inner dims differ: " + shape_str(a.shape()) + " x " + shape_str(b.shape()) +
                (transpose_b ? " (transposed)" : ""));

    std::vector<double> out(static_cast<std::size_t>(m) * n, 0.0);
    const double* ad = a.values().data();
    const double* bd = b.values().data();
    if (!transpose_b) {
        for (int i = 0; i < m; ++i) {
            const double* arow = ad + static_cast<std::size_t>(i) * k;
            double* orow = out.data() + static_cast<std::size_t>(i) * n;
            for (int p = 0; p < k; ++p) {
                const double av = arow[p];
                const double* brow = bd + static_cast<std::size_t>(p) * n;
                for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
            }
        }
    } else {
        for (int i = 0; i < m; ++i) {
            const double* arow = ad + static_cast<std::size_t>(i) * k;
            double* orow = out.data() + static_cast<std::size_t>(i) * n;
            for (int j = 0; j < n; ++j) {
                const double* brow = bd + static_cast<std::size_t>(j) * k;
                double acc = 0.0;
                for (int p = 0; p < k; ++p) acc += arow[p] * brow[p];
                orow[j] = acc;
            }
        }
    }

    TensorNode* an = a.node();
    TensorNode* bn = b.node();
    return finish("matmul", {m, n}, std::move(out), {a, b}, [=](TensorNode* on) {
        return [=]() {
            on->ensure_grad();
            const double* g = on->grad.data();
            const double* av = an->data.data();
            const double* bv = bn->data.data();
            if (an->requires_grad) {
                an->ensure_grad();
                double* da = an->grad.data();
                if (!transpose_b) {
                    // dA += g . B^T
                    for (int i = 0; i < m; ++i) {
                        const double* grow = g + static_cast<std::size_t>(i) * n;
                        double* darow = da + static_cast<std::size_t>(i) * k;
                        for (int p = 0; p < k; ++p) {
                            const double* brow = bv + static_cast<std::size_t>(p) * n;
                            double acc = 0.0;
                            for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
                            darow[p] += acc;
                        }
                    }
                } else {
                    // dA += g . B
                    for (int i = 0; i < m; ++i) {
                        const double* grow = g + static_cast<std::size_t>(i) * n;
                        double* darow = da + static_cast<std::size_t>(i) * k;
                        for (int j = 0; j < n; ++j) {
                            const double gv = grow[j];
                            const double* brow = bv + static_cast<std::size_t>(j) * k;
                            for (int p = 0; p < k; ++p) darow[p] += gv * brow[p];
                        }
                    }
                }
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                double* db = bn->grad.data();
                if (!transpose_b) {
                    // dB += A^T . g
                    for (int i = 0; i < m; ++i) {
                        const double* arow = av + static_cast<std::size_t>(i) * k;
                        const double* grow = g + static_cast<std::size_t>(i) * n;
                        for (int p = 0; p < k; ++p) {
                            const double a_ip = arow[p];
                            double* dbrow = db + static_cast<std::size_t>(p) * n;
                            for (int j = 0; j < n; ++j) dbrow[j] += a_ip * grow[j];
                        }
                    }
                } else {
                    // dB += g^T . A
                    for (int i = 0; i < m; ++i) {
                        const double* arow = av + static_cast<std::size_t>(i) * k;
                        const double* grow = g + static_cast<std::size_t>(i) * n;
                        for (int j = 0; j < n; ++j) {
                            const double gv = grow[j];
                            double* dbrow = db + static_cast<std::size_t>(j) * k;
                            for (int p = 0; p < k; ++p) dbrow[p] += gv * arow[p];
                        }
                    }
                }
            }
        };
    });
}

namespace {

Tensor elementwise_pair(const char* op, const Tensor& a, const Tensor& b, double sign_b) {
    require(a.shape() == b.shape(), op,
            "shape mismatch: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    std::vector<double> out(a.values().size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + sign_b * b.values()[i];
    TensorNode* an = a.node();
    TensorNode* bn = b.node();
    return finish(op, a.shape(), std::move(out), {a, b}, [=](TensorNode* on) {
        return [=]() {
            on->ensure_grad();
            if (an->requires_grad) {
                an->ensure_grad();
                for (std::size_t i = 0; i < on->grad.size(); ++i) an->grad[i] += on->grad[i];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (std::size_t i = 0; i < on->grad.size(); ++i) bn->grad[i] += sign_b * on->grad[i];
            }
        };
    });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return elementwise_pair("add", a, b, 1.0); }

Tensor sub(const Tensor& a, const Tensor& b) { return elementwise_pair("sub", a, b, -1.0); }

Tensor add_bias(const Tensor& x, const Tensor& bias) {
    require_2d(x, "add_bias", "x");
    require(bias.shape().size() == 1 && bias.shape()[0] == x.cols(), "add_bias",
            "bias " + shape_str(bias.shape()) + " does not match columns of " + shape_str(x.shape()));
    const int r = x.rows();
    const int c = x.cols();
    std::vector<double> out(x.values().size());
    for (int i = 0; i < r; ++i) {
        for (int j = 0; j < c; ++j) {
            out[static_cast<std::size_t>(i) * c + j] =
                x.values()[static_cast<std::size_t>(i) * c + j] + bias.values()[j];
        }
    }
    TensorNode* xn = x.node();
    TensorNode* bn = bias.node();
    return finish("add_bias", x.shape(), std::move(out), {x, bias}, [=](TensorNode* on) {
        return [=]() {
            on->ensure_grad();
            if (xn->requires_grad) {
                xn->ensure_grad();
                for (std::size_t i = 0; i < on->grad.size(); ++i) xn->grad[i] += on->grad[i];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (int i = 0; i < r; ++i) {
                    for (int j = 0; j < c; ++j) {
                        bn->grad[j] += on->grad[static_cast<std::size_t>(i) * c + j];
                    }
                }
            }
        };
    });
}

Tensor scale(const Tensor& x, double c) {
    std::vector<double> out(x.values().size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = c * x.values()[i];
    TensorNode* xn = x.node();
    return finish("scale", x.shape(), std::move(out), {x}, [=](TensorNode* on) {
        return [=]() {
            on->ensure_grad();
            if (xn->requires_grad) {
                xn->ensure_grad();
                for (std::size_t i = 0; i < on->grad.size(); ++i) xn->grad[i] += c * on->grad[i];
            }
        };
    });
}

Tensor relu(const Tensor& x) {
    std::vector<double> out(x.values().size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.values()[i] > 0.0 ? x.values()[i] : 0.0;
    TensorNode* xn = x.node();
    return finish("relu", x.shape(), std::move(out), {x}, [=](TensorNode* on) {
        return [=]() {
            on->ensure_grad();
            if (xn->requires_grad) {
                xn->ensure_grad();
                for (std::size_t i = 0; i < on->grad.size(); ++i) {
                    if (xn->data[i] > 0.0) xn->grad[i] += on->grad[i];
                }
            }
        };
    });
}

Tensor tanh_squash(const Tensor& x) {
    std::vector<double> out(x.values().size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(x.values()[i]);
    TensorNode* xn = x.node();
    return finish("tanh", x.shape(), std::move(out), {x}, [=](TensorNode* on) {
        return [=]() {
            on->ensure_grad();
            if (xn->requires_grad) {
                xn->ensure_grad();
                for (std::size_t i = 0; i < on->grad.size(); ++i) {
                    const double y = on->data[i];
                    xn->grad[i] += (1.0 - y * y) * on->grad[i];
                }
            }
        };
    });
}

Tensor softmax_rows(const Tensor& x) {
    const int c = x.cols();
    const int r = static_cast<int>(x.size() / c);
    std::vector<double> out(x.values().size());
    for (int i = 0; i < r; ++i) {
        const double* row = x.values().data() + static_cast<std::size_t>(i) * c;
        double* orow = out.data() + static_cast<std::size_t>(i) * c;
        double mx = row[0];
        for (int j = 1; j < c; ++j) mx = std::max(mx, row[j]);
        double sum = 0.0;
        for (int j = 0; j < c; ++j) {
            orow[j] = std::exp(row[j] - mx);
            sum += orow[j];
        }
        for (int j = 0; j < c; ++j) orow[j] /= sum;
    }
    TensorNode* xn = x.node();
    return finish("softmax", x.shape(), std::move(out), {x}, [=](TensorNode* on) {
        return [=]() {
            on->ensure_grad();
            if (!xn->requires_grad) return;
            xn->ensure_grad();
            for (int i = 0; i < r; ++i) {
                const double* p = on->data.data() + static_cast<std::size_t>(i) * c;
                const double* g = on->grad.data() + static_cast<std::size_t>(i) * c;
                double* dx = xn->grad.data() + static_cast<std::size_t>(i) * c;
                double dot = 0.0;
                for (int j = 0; j < c; ++j) dot += g[j] * p[j];
                for (int j = 0; j < c; ++j) dx[j] += p[j] * (g[j] - dot);
            }
        };
    });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    const int c = x.cols();
    const int r = static_cast<int>(x.size() / c);
    require(gain.shape().size() == 1 && gain.shape()[0] == c, "layer_norm", "gain must be [cols]");
    require(bias.shape().size() == 1 && bias.shape()[0] == c, "layer_norm", "bias must be [cols]");

    std::vector<double> out(x.values().size());
    std::vector<double> xhat(x.values().size());
    std::vector<double> inv_sd(static_cast<std::size_t>(r));
    for (int i = 0; i < r; ++i) {
        const double* row = x.values().data() + static_cast<std::size_t>(i) * c;
        double mean = 0.0;
        for (int j = 0; j < c; ++j) mean += row[j];
        mean /= c;
        double var = 0.0;
        for (int j = 0; j < c; ++j) var += (row[j] - mean) * (row[j] - mean);
        var /= c;
        const double inv = 1.0 / std::sqrt(var + eps);
        inv_sd[static_cast<std::size_t>(i)] = inv;
        for (int j = 0; j < c; ++j) {
            const std::size_t idx = static_cast<std::size_t>(i) * c + j;
            xhat[idx] = (row[j] - mean) * inv;
            out[idx] = xhat[idx] * gain.values()[j] + bias.values()[j];
        }
    }
    TensorNode* xn = x.node();
    TensorNode* gn = gain.node();
    TensorNode* bn = bias.node();
    auto xhat_s = std::make_shared<std::vector<double>>(std::move(xhat));
    auto inv_s = std::make_shared<std::vector<double>>(std::move(inv_sd));
    return finish("layer_norm", x.shape(), std::move(out), {x, gain, bias}, [=](TensorNode* on) {
        return [=]() {
            on->ensure_grad();
            const std::vector<double>& xh = *xhat_s;
            const std::vector<double>& inv = *inv_s;
            if (gn->requires_grad) {
                gn->ensure_grad();
                for (int i = 0; i < r; ++i) {
                    for (int j = 0; j < c; ++j) {
                        const std::size_t idx = static_cast<std::size_t>(i) * c + j;
                        gn->grad[j] += on->grad[idx] * xh[idx];
                    }
                }
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (int i = 0; i < r; ++i) {
                    for (int j = 0; j < c; ++j) {
                        bn->grad[j] += on->grad[static_cast<std::size_t>(i) * c + j];
                    }
                }
            }
            if (xn->requires_grad) {
                xn->ensure_grad();
                for (int i = 0; i < r; ++i) {
                    const double* g = on->grad.data() + static_cast<std::size_t>(i) * c;
                    const double* xhrow = xh.data() + static_cast<std::size_t>(i) * c;
                    double* dx = xn->grad.data() + static_cast<std::size_t>(i) * c;
                    double mean_gh = 0.0;
                    double mean_ghx = 0.0;
                    for (int j = 0; j < c; ++j) {
                        const double gh = g[j] * gn->data[j];
                        mean_gh += gh;
                        mean_ghx += gh * xhrow[j];
                    }
                    mean_gh /= c;
                    mean_ghx /= c;
                    for (int j = 0; j < c; ++j) {
                        const double gh = g[j] * gn->data[j];
                        dx[j] += inv[static_cast<std::size_t>(i)] * (gh - mean_gh - xhrow[j] * mean_ghx);
                    }
                }
            }
        };
    });
}

Tensor dropout(const Tensor& x, double p, Mode mode, RngStream* rng) {
    require(p >= 0.0 && p < 1.0, "dropout", "p must be in [0,1)");
    if (mode == Mode::kEval || p == 0.0) return x;
    require(rng != nullptr, "dropout", "train mode needs an rng stream");
    const double keep_scale = 1.0 / (1.0 - p);
    auto mask = std::make_shared<std::vector<double>>(x.values().size());
    std::vector<double> out(x.values().size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double m = rng->uniform() >= p ? keep_scale : 0.0;
        (*mask)[i] = m;
        out[i] = x.values()[i] * m;
    }
    TensorNode* xn = x.node();
    return finish("dropout", x.shape(), std::move(out), {x}, [=](TensorNode* on) {
        return [=]() {
            on->ensure_grad();
            if (xn->requires_grad) {
                xn->ensure_grad();
                for (std::size_t i = 0; i < on->grad.size(); ++i) {
                    xn->grad[i] += (*mask)[i] * on->grad[i];
                }
            }
        };
    });
}

Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids) {
    require_2d(table, "embedding_lookup", "table");
    const int v = table.rows();
    const int d = table.cols();
    const int n = static_cast<int>(ids.size());
    require(n > 0, "embedding_lookup", "ids must be non-empty");
    for (int id : ids) {
        require(id >= 0 && id < v, "embedding_lookup",
                "id " + std::to_string(id) + " outside table rows " + std::to_string(v));
    }
    std::vector<double> out(static_cast<std::size_t>(n) * d);
    for (int i = 0; i < n; ++i) {
        const double* src = table.values().data() + static_cast<std::size_t>(ids[i]) * d;
        std::memcpy(out.data() + static_cast<std::size_t>(i) * d, src, sizeof(double) * d);
    }
    TensorNode* tn = table.node();
    auto ids_s = std::make_shared<std::vector<int>>(ids);
    return finish("embedding_lookup", {n, d}, std::move(out), {table}, [=](TensorNode* on) {
        return [=]() {
            on->ensure_grad();
            if (!tn->requires_grad) return;
            tn->ensure_grad();
            for (int i = 0; i < n; ++i) {
                const double* g = on->grad.data() + static_cast<std::size_t>(i) * d;
                double* dst = tn->grad.data() + static_cast<std::size_t>((*ids_s)[i]) * d;
                for (int j = 0; j < d; ++j) dst[j] += g[j];
            }
        };
    });
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
    require(!parts.empty(), "concat", "needs at least one part");
    require(axis == 0 || axis == 1, "concat", "axis must be 0 or 1");
    const bool one_d = parts[0].shape().size() == 1;
    if (one_d) {
        require(axis == 0, "concat", "1-D parts concatenate along axis 0");
        int total = 0;
        for (const Tensor& p : parts) {
            require(p.shape().size() == 1, "concat", "mixed ranks");
            total += p.shape()[0];
        }
        std::vector<double> out;
        out.reserve(static_cast<std::size_t>(total));
        for (const Tensor& p : parts) out.insert(out.end(), p.values().begin(), p.values().end());
        auto nodes = std::make_shared<std::vector<TensorNode*>>();
        for (const Tensor& p : parts) nodes->push_back(p.node());
        return finish("concat", {total}, std::move(out), parts, [=](TensorNode* on) {
            return [=]() {
                on->ensure_grad();
                std::size_t off = 0;
                for (TensorNode* pn : *nodes) {
                    if (pn->requires_grad) {
                        pn->ensure_grad();
                        for (std::size_t i = 0; i < pn->data.size(); ++i) {
                            pn->grad[i] += on->grad[off + i];
                        }
                    }
                    off += pn->data.size();
                }
            };
        });
    }

    for (const Tensor& p : parts) require_2d(p, "concat", "part");
    if (axis == 0) {
        const int c = parts[0].cols();
        int rtotal = 0;
        for (const Tensor& p : parts) {
            require(p.cols() == c, "concat", "column mismatch");
            rtotal += p.rows();
        }
        std::vector<double> out;
        out.reserve(static_cast<std::size_t>(rtotal) * c);
        for (const Tensor& p : parts) out.insert(out.end(), p.values().begin(), p.values().end());
        auto nodes = std::make_shared<std::vector<TensorNode*>>();
        for (const Tensor& p : parts) nodes->push_back(p.node());
        return finish("concat", {rtotal, c}, std::move(out), parts, [=](TensorNode* on) {
            return [=]() {
                on->ensure_grad();
                std::size_t off = 0;
                for (TensorNode* pn : *nodes) {
                    if (pn->requires_grad) {
                        pn->ensure_grad();
                        for (std::size_t i = 0; i < pn->data.size(); ++i) {
                            pn->grad[i] += on->grad[off + i];
                        }
                    }
                    off += pn->data.size();
                }
            };
        });
    }

    // axis == 1
    const int r = parts[0].rows();
    int ctotal = 0;
    for (const Tensor& p : parts) {
        require(p.rows() == r, "concat", "row mismatch");
        ctotal += p.cols();
    }
    std::vector<double> out(static_cast<std::size_t>(r) * ctotal);
    int coff = 0;
    for (const Tensor& p : parts) {
        const int pc = p.cols();
        for (int i = 0; i < r; ++i) {
            std::memcpy(out.data() + static_cast<std::size_t>(i) * ctotal + coff,
                        p.values().data() + static_cast<std::size_t>(i) * pc, sizeof(double) * pc);
        }
        coff += pc;
    }
    auto nodes = std::make_shared<std::vector<TensorNode*>>();
    for (const Tensor& p : parts) nodes->push_back(p.node());
    return finish("concat", {r, ctotal}, std::move(out), parts, [=](TensorNode* on) {
        return [=]() {
            on->ensure_grad();
            int off = 0;
            for (TensorNode* pn : *nodes) {
                const int pc = pn->shape[1];
                if (pn->requires_grad) {
                    pn->ensure_grad();
                    for (int i = 0; i < r; ++i) {
                        const double* g = on->grad.data() + static_cast<std::size_t>(i) * ctotal + off;
                        double* dst = pn->grad.data() + static_cast<std::size_t>(i) * pc;
                        for (int j = 0; j < pc; ++j) dst[j] += g[j];
                    }
                }
                off += pc;
            }
        };
    });
}

Tensor interleave_rows(const std::vector<Tensor>& parts) {
    require(!parts.empty(), "interleave_rows", "needs at least one part");
    for (const Tensor& p : parts) require_2d(p, "interleave_rows", "part");
    const int kparts = static_cast<int>(parts.size());
    const int l = parts[0].rows();
    const int c = parts[0].cols();
    for (const Tensor& p : parts) {
        require(p.rows() == l && p.cols() == c, "interleave_rows", "parts must share shape");
    }
    std::vector<double> out(static_cast<std::size_t>(kparts) * l * c);
    for (int i = 0; i < l; ++i) {
        for (int j = 0; j < kparts; ++j) {
            std::memcpy(out.data() + (static_cast<std::size_t>(i) * kparts + j) * c,
                        parts[static_cast<std::size_t>(j)].values().data() + static_cast<std::size_t>(i) * c,
                        sizeof(double) * c);
        }
    }
    auto nodes = std::make_shared<std::vector<TensorNode*>>();
    for (const Tensor& p : parts) nodes->push_back(p.node());
    return finish("interleave_rows", {kparts * l, c}, std::move(out), parts, [=](TensorNode* on) {
        return [=]() {
            on->ensure_grad();
            for (int j = 0; j < kparts; ++j) {
                TensorNode* pn = (*nodes)[static_cast<std::size_t>(j)];
                if (!pn->requires_grad) continue;
                pn->ensure_grad();
                for (int i = 0; i < l; ++i) {
                    const double* g = on->grad.data() + (static_cast<std::size_t>(i) * kparts + j) * c;
                    double* dst = pn->grad.data() + static_cast<std::size_t>(i) * c;
                    for (int q = 0; q < c; ++q) dst[q] += g[q];
                }
            }
        };
    });
}

Tensor slice_rows(const Tensor& x, int begin, int end) {
    require_2d(x, "slice_rows", "x");
    require(begin >= 0 && begin < end && end <= x.rows(), "slice_rows",
            "range [" + std::to_string(begin) + "," + std::to_string(end) + ") outside rows " +
                std::to_string(x.rows()));
    const int c = x.cols();
    const int n = end - begin;
    std::vector<double> out(x.values().begin() + static_cast<std::size_t>(begin) * c,
                            x.values().begin() + static_cast<std::size_t>(end) * c);
    TensorNode* xn = x.node();
    return finish("slice_rows", {n, c}, std::move(out), {x}, [=](TensorNode* on) {
        return [=]() {
            on->ensure_grad();
            if (!xn->requires_grad) return;
            xn->ensure_grad();
            for (std::size_t i = 0; i < on->grad.size(); ++i) {
                xn->grad[static_cast<std::size_t>(begin) * c + i] += on->grad[i];
            }
        };
    });
}

Tensor slice_cols(const Tensor& x, int begin, int end) {
    require_2d(x, "slice_cols", "x");
    require(begin >= 0 && begin < end && end <= x.cols(), "slice_cols",
            "range [" + std::to_string(begin) + "," + std::to_string(end) + ") outside cols " +
                std::to_string(x.cols()));
    const int r = x.rows();
    const int c = x.cols();
    const int n = end - begin;
    std::vector<double> out(static_cast<std::size_t>(r) * n);
    for (int i = 0; i < r; ++i) {
        std::memcpy(out.data() + static_cast<std::size_t>(i) * n,
                    x.values().data() + static_cast<std::size_t>(i) * c + begin, sizeof(double) * n);
    }
    TensorNode* xn = x.node();
    return finish("slice_cols", {r, n}, std::move(out), {x}, [=](TensorNode* on) {
        return [=]() {
            on->ensure_grad();
            if (!xn->requires_grad) return;
            xn->ensure_grad();
            for (int i = 0; i < r; ++i) {
                const double* g = on->grad.data() + static_cast<std::size_t>(i) * n;
                double* dst = xn->grad.data() + static_cast<std::size_t>(i) * c + begin;
                for (int j = 0; j < n; ++j) dst[j] += g[j];
            }
        };
    });
}

Tensor mean_all(const Tensor& x) {
    const double n = static_cast<double>(x.size());
    double sum = 0.0;
    for (double v : x.values()) sum += v;
    TensorNode* xn = x.node();
    return finish("mean_all", {1}, {sum / n}, {x}, [=](TensorNode* on) {
        return [=]() {
            on->ensure_grad();
            if (!xn->requires_grad) return;
            xn->ensure_grad();
            const double g = on->grad[0] / n;
            for (double& dv : xn->grad) dv += g;
        };
    });
}

Tensor mean_rows(const Tensor& x) {
    require_2d(x, "mean_rows", "x");
    const int r = x.rows();
    const int c = x.cols();
    std::vector<double> out(static_cast<std::size_t>(c), 0.0);
    for (int i = 0; i < r; ++i) {
        for (int j = 0; j < c; ++j) out[static_cast<std::size_t>(j)] += x.values()[static_cast<std::size_t>(i) * c + j];
    }
    for (double& v : out) v /= r;
    TensorNode* xn = x.node();
    return finish("mean_rows", {1, c}, std::move(out), {x}, [=](TensorNode* on) {
        return [=]() {
            on->ensure_grad();
            if (!xn->requires_grad) return;
            xn->ensure_grad();
            for (int i = 0; i < r; ++i) {
                for (int j = 0; j < c; ++j) {
                    xn->grad[static_cast<std::size_t>(i) * c + j] += on->grad[static_cast<std::size_t>(j)] / r;
                }
            }
        };
    });
}

Tensor vector_norm(const Tensor& x, NormKind kind) {
    double value = 0.0;
    if (kind == NormKind::kL2) {
        for (double v : x.values()) value += v * v;
        value = std::sqrt(value);
    } else {
        for (double v : x.values()) value += std::abs(v);
    }
    TensorNode* xn = x.node();
    return finish("vector_norm", {1}, {value}, {x}, [=](TensorNode* on) {
        return [=]() {
            on->ensure_grad();
            if (!xn->requires_grad) return;
            xn->ensure_grad();
            const double g = on->grad[0];
            if (kind == NormKind::kL2) {
                const double norm = on->data[0];
                if (norm == 0.0) return;  // subgradient 0 at the origin
                for (std::size_t i = 0; i < xn->data.size(); ++i) {
                    xn->grad[i] += g * xn->data[i] / norm;
                }
            } else {
                for (std::size_t i = 0; i < xn->data.size(); ++i) {
                    const double v = xn->data[i];
                    if (v > 0.0) xn->grad[i] += g;
                    else if (v < 0.0) xn->grad[i] -= g;
                }
            }
        };
    });
}

Tensor clamp_max(const Tensor& x, double limit) {
    std::vector<double> out(x.values().size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::min(x.values()[i], limit);
    TensorNode* xn = x.node();
    return finish("clamp_max", x.shape(), std::move(out), {x}, [=](TensorNode* on) {
        return [=]() {
            on->ensure_grad();
            if (!xn->requires_grad) return;
            xn->ensure_grad();
            for (std::size_t i = 0; i < on->grad.size(); ++i) {
                if (xn->data[i] < limit) xn->grad[i] += on->grad[i];
            }
        };
    });
}

}  // namespace stitchformer
