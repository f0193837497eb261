#include "lmmnn/model_io.hpp"

#include <fstream>
#include <stdexcept>

namespace lmmnn {

using nlohmann::json;

json net_to_json(const FeedForwardNet& net) {
    json layers = json::array();
    for (const auto& l : net.layers()) {
        switch (l.kind) {
            case LayerSpec::Kind::Dense:
                layers.push_back({{"kind", "dense"},
                                  {"out", l.out},
                                  {"activation", l.activation == Activation::Relu ? "relu" : "linear"}});
                break;
            case LayerSpec::Kind::Dropout: layers.push_back({{"kind", "dropout"}, {"rate", l.rate}}); break;
            case LayerSpec::Kind::Embedding:
                layers.push_back({{"kind", "embedding"}, {"vocab", l.vocab}, {"dim", l.dim}, {"column", l.column}});
                break;
        }
    }
    json params = json::array();
    for (const auto& t : net.params())
        params.push_back({{"name", t.name}, {"rows", t.value.rows()}, {"cols", t.value.cols()}, {"data", t.value.data()}});
    return {{"input_dim", net.input_dim()}, {"layers", layers}, {"params", params}};
}

FeedForwardNet net_from_json(const json& j) {
    std::vector<LayerSpec> layers;
    for (const auto& l : j.at("layers")) {
        const auto kind = l.at("kind").get<std::string>();
        if (kind == "dense")
            layers.push_back(LayerSpec::dense(l.at("out").get<std::size_t>(),
                                              l.at("activation").get<std::string>() == "relu" ? Activation::Relu
                                                                                              : Activation::Linear));
        else if (kind == "dropout")
            layers.push_back(LayerSpec::dropout(l.at("rate").get<double>()));
        else if (kind == "embedding")
            layers.push_back(LayerSpec::embedding(l.at("vocab").get<std::size_t>(), l.at("dim").get<std::size_t>(),
                                                  l.value("column", std::size_t{0})));
        else
            throw std::invalid_argument("unknown layer kind '" + kind + "'");
    }
    FeedForwardNet net(j.at("input_dim").get<std::size_t>(), std::move(layers), 0);
    const auto& ps = j.at("params");
    if (ps.size() != net.params().size()) throw std::invalid_argument("saved network has the wrong parameter count");
    for (std::size_t i = 0; i < ps.size(); ++i) {
        auto& t = net.params()[i];
        auto data = ps[i].at("data").get<std::vector<double>>();
        if (ps[i].at("rows").get<std::size_t>() != t.value.rows() || ps[i].at("cols").get<std::size_t>() != t.value.cols() ||
            data.size() != t.value.data().size())
            throw std::invalid_argument("saved parameter " + t.name + " has the wrong shape");
        t.value.data() = std::move(data);
    }
    return net;
}

void write_json(const json& j, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << j.dump() << '\n';
    if (!out) throw std::runtime_error("write failed for " + path);
}

json read_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    return json::parse(in);
}

}  // namespace lmmnn
