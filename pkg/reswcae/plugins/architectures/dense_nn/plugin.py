from reswcae.autodiff import elementwise, reshape
from reswcae.layers import DenseLayer, dense
from reswcae.models import BaseArchitecturePlugin, ConfigurationError


class DenseNNPlugin(BaseArchitecturePlugin):
    """
    Fully connected baseline on flattened images.

    With the default 103x96 input the widths are 9888 -> 1024 -> 256 -> 1024 -> 9888,
    ReLU on the hidden layers and a sigmoid on the output. The wavelet input and the
    skip ablation flag are ignored.
    """

    def build_layers(self, rng, dtype):
        pixels = self.config.input_height * self.config.input_width
        widths = [pixels] + list(self.config.dense_hidden) + [pixels]
        for index, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:]), start=1):
            self.add_layer(f"dense.{index}", DenseLayer(fan_in, fan_out, rng, dtype))

    def shape_plan(self):
        plan = []
        width = self.config.input_height * self.config.input_width
        for name, layer in self.layers.items():
            if layer.in_features != width:
                raise ConfigurationError(
                    f"Layer {name} expects {layer.in_features} inputs, receives {width}."
                )
            width = layer.out_features
            plan.append((name, (width,)))
        return plan

    def forward_tensor(self, x, wavelet_input=None, ablate_skips=False):
        batch, _, height, width = x.shape
        h = reshape(x, (batch, height * width))
        layers = list(self.layers.values())
        for layer in layers[:-1]:
            h = elementwise("relu", dense(layer, h))
        h = elementwise("sigmoid", dense(layers[-1], h))
        return reshape(h, (batch, 1, height, width))
