#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "tgl/errors.hpp"
#include "tgl/gates.hpp"
#include "tgl/layers.hpp"
#include "tgl/ops.hpp"

namespace tgl {

namespace detail {

inline std::vector<std::size_t> kept_indices(const std::vector<bool>& mask) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < mask.size(); ++i)
        if (mask[i]) idx.push_back(i);
    return idx;
}

}  // namespace detail

// Converts gate decisions into a structurally smaller network:
//   channel gates - closed output channels are removed, and the next
//     parameterized layer drops the matching inputs (spatial positions of a
//     removed conv channel disappear from a following dense layer too);
//   weight gates  - closed weights are zeroed in place, shapes stay;
//   block gates   - a closed block zeroes the whole layer.
// The result carries no gates. Throws if a channel-gated layer would lose
// every channel, since the network could then no longer be evaluated.
inline GatedModel hard_prune(const GatedModel& model, const Shape& sample_shape) {
    model.validate();
    GatedModel out;
    Shape sample = sample_shape;
    std::vector<bool> in_mask;  // over input channels of the next layer; empty = keep all

    for (const Layer& l : model.layers) {
        if (l.kind == Layer::Kind::flatten) {
            if (sample.size() < 2)
                throw shape_error("flatten: sample shape " + shape_str(sample) +
                                  " has no axes to merge");
            std::size_t spatial = 1;
            for (std::size_t i = 1; i < sample.size(); ++i) spatial *= sample[i];
            if (!in_mask.empty()) {
                std::vector<bool> expanded;
                expanded.reserve(in_mask.size() * spatial);
                for (bool keep : in_mask)
                    for (std::size_t s = 0; s < spatial; ++s) expanded.push_back(keep);
                in_mask = std::move(expanded);
            }
            sample = {numel(sample)};
            out.layers.push_back(Layer::flatten(l.name));
            continue;
        }
        if (!l.parameterized()) continue;

        // start from a copy with weight/block gate effects folded in
        Tensor w = *l.weight;
        Tensor b = l.bias ? *l.bias : Tensor();
        if (l.gate && l.gate->mode == GateMode::weight) {
            const std::vector<bool> wm = l.gate->mask();
            for (std::size_t i = 0; i < w.size(); ++i)
                if (!wm[i]) w[i] = 0;
        } else if (l.gate && l.gate->mode == GateMode::block) {
            if (!l.gate->mask()[0]) {
                for (std::size_t i = 0; i < w.size(); ++i) w[i] = 0;
                for (std::size_t i = 0; i < b.size() && l.bias; ++i) b[i] = 0;
            }
        }

        std::vector<bool> out_mask;
        if (l.gate && l.gate->mode == GateMode::channel) {
            out_mask = l.gate->mask();
            if (detail::kept_indices(out_mask).empty())
                throw degenerate_model_error("layer '" + l.name +
                                             "': every channel is gated off, nothing would "
                                             "remain after pruning");
        }

        if (l.kind == Layer::Kind::dense) {
            if (sample.size() != 1 || sample[0] != w.dim(0))
                throw shape_error("layer '" + l.name + "': sample " + shape_str(sample) +
                                  " does not match weight " + shape_str(w.shape()));
            const std::size_t in_n = w.dim(0), out_n = w.dim(1);
            std::vector<std::size_t> rows =
                in_mask.empty() ? std::vector<std::size_t>() : detail::kept_indices(in_mask);
            if (!in_mask.empty() && in_mask.size() != in_n)
                throw shape_error("layer '" + l.name + "': predecessor mask covers " +
                                  std::to_string(in_mask.size()) + " inputs, layer has " +
                                  std::to_string(in_n));
            std::vector<std::size_t> cols = out_mask.empty() ? std::vector<std::size_t>()
                                                             : detail::kept_indices(out_mask);
            const std::size_t new_in = in_mask.empty() ? in_n : rows.size();
            const std::size_t new_out = out_mask.empty() ? out_n : cols.size();

            Layer nl = Layer::dense(l.name, new_in, new_out, l.bias != nullptr, l.act);
            for (std::size_t i = 0; i < new_in; ++i) {
                const std::size_t si = in_mask.empty() ? i : rows[i];
                for (std::size_t j = 0; j < new_out; ++j) {
                    const std::size_t sj = out_mask.empty() ? j : cols[j];
                    (*nl.weight)[i * new_out + j] = w[si * out_n + sj];
                }
            }
            if (l.bias)
                for (std::size_t j = 0; j < new_out; ++j)
                    (*nl.bias)[j] = b[out_mask.empty() ? j : cols[j]];
            out.layers.push_back(std::move(nl));
            sample = {out_n};  // keep tracking pre-prune dims; masks index into them
        } else {
            if (sample.size() != 3 || sample[0] != w.dim(1))
                throw shape_error("layer '" + l.name + "': sample " + shape_str(sample) +
                                  " does not match kernel " + shape_str(w.shape()));
            const std::size_t out_n = w.dim(0), in_n = w.dim(1), k = w.dim(2);
            std::vector<std::size_t> ins =
                in_mask.empty() ? std::vector<std::size_t>() : detail::kept_indices(in_mask);
            std::vector<std::size_t> outs = out_mask.empty() ? std::vector<std::size_t>()
                                                             : detail::kept_indices(out_mask);
            const std::size_t new_in = in_mask.empty() ? in_n : ins.size();
            const std::size_t new_out = out_mask.empty() ? out_n : outs.size();

            Layer nl = Layer::conv(l.name, new_in, new_out, k, l.stride, l.padding,
                                   l.bias != nullptr, l.act);
            for (std::size_t o = 0; o < new_out; ++o) {
                const std::size_t so = out_mask.empty() ? o : outs[o];
                for (std::size_t i = 0; i < new_in; ++i) {
                    const std::size_t si = in_mask.empty() ? i : ins[i];
                    for (std::size_t t = 0; t < k * k; ++t)
                        (*nl.weight)[(o * new_in + i) * k * k + t] =
                            w[(so * in_n + si) * k * k + t];
                }
            }
            if (l.bias)
                for (std::size_t o = 0; o < new_out; ++o)
                    (*nl.bias)[o] = b[out_mask.empty() ? o : outs[o]];
            const detail::ConvDims d = detail::conv2d_dims(
                {1, sample[0], sample[1], sample[2]}, w.shape(), l.stride, l.padding);
            sample = {out_n, d.hout, d.wout};  // pre-prune dims; masks index into them
            out.layers.push_back(std::move(nl));
        }
        in_mask = out_mask;  // empty when this layer was not channel gated
    }
    out.validate();
    return out;
}

}  // namespace tgl
