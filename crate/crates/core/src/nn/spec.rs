use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::NnError;

/// Tensor shape of an activation. Images are stored height-major with
/// channels innermost (`H x W x C`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Flat(usize),
    Image { height: usize, width: usize, channels: usize },
}

impl Shape {
    pub fn len(&self) -> usize {
        match *self {
            Shape::Flat(n) => n,
            Shape::Image { height, width, channels } => height * width * channels,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Shape::Flat(n) => write!(f, "{n}"),
            Shape::Image { height, width, channels } => write!(f, "{channels}x{height}x{width}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layer {
    Dense(usize),
    Conv3d { out_channels: usize, kernel: usize, stride: usize },
    MaxPool { kernel: usize, stride: usize },
    Relu,
    Sigmoid,
}

impl Layer {
    pub fn has_params(&self) -> bool {
        matches!(self, Layer::Dense(_) | Layer::Conv3d { .. })
    }

    /// Weight and bias lengths for an input of shape `input`.
    pub fn param_lens(&self, input: Shape) -> (usize, usize) {
        match *self {
            Layer::Dense(n) => (input.len() * n, n),
            Layer::Conv3d { out_channels, kernel, .. } => {
                let c = match input {
                    Shape::Image { channels, .. } => channels,
                    Shape::Flat(_) => 0,
                };
                (out_channels * kernel * kernel * c, out_channels)
            }
            _ => (0, 0),
        }
    }

    pub fn output_shape(&self, input: Shape) -> Result<Shape, NnError> {
        let window = |h: usize, w: usize, k: usize, s: usize| {
            if k == 0 || s == 0 {
                return Err(NnError::InvalidSpec(format!("{self}: kernel and stride must be positive")));
            }
            if k > h || k > w {
                return Err(NnError::InvalidSpec(format!("{self}: window larger than {h}x{w} input")));
            }
            Ok(((h - k) / s + 1, (w - k) / s + 1))
        };
        match (*self, input) {
            (Layer::Dense(0), _) => Err(NnError::InvalidSpec("FC(0)".into())),
            (Layer::Dense(n), _) => Ok(Shape::Flat(n)),
            (Layer::Relu | Layer::Sigmoid, s) => Ok(s),
            (Layer::Conv3d { out_channels, kernel, stride }, Shape::Image { height, width, .. }) => {
                if out_channels == 0 {
                    return Err(NnError::InvalidSpec(format!("{self}: no output channels")));
                }
                let (h, w) = window(height, width, kernel, stride)?;
                Ok(Shape::Image { height: h, width: w, channels: out_channels })
            }
            (Layer::MaxPool { kernel, stride }, Shape::Image { height, width, channels }) => {
                let (h, w) = window(height, width, kernel, stride)?;
                Ok(Shape::Image { height: h, width: w, channels })
            }
            (layer, Shape::Flat(_)) => Err(NnError::InvalidSpec(format!("{layer} needs an image input"))),
        }
    }
}

impl fmt::Display for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Layer::Dense(n) => write!(f, "FC({n})"),
            Layer::Conv3d { out_channels, kernel, stride } => write!(f, "C({out_channels},{kernel},{stride})"),
            Layer::MaxPool { kernel, stride } => write!(f, "MP({kernel},{stride})"),
            Layer::Relu => f.write_str("ReLU"),
            Layer::Sigmoid => f.write_str("Sigmoid"),
        }
    }
}

/// Network architecture in the notation `784-FC(512)-ReLU-FC(10)` or
/// `3x32x32-C(32,3,2)-ReLU-MP(2,1)-FC(10)`. Image inputs are written
/// `C x H x W`. Activation functions are explicit layers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelSpec {
    input: Shape,
    layers: Vec<Layer>,
    shapes: Vec<Shape>,
}

impl ModelSpec {
    pub fn new(input: Shape, layers: Vec<Layer>) -> Result<Self, NnError> {
        if input.is_empty() {
            return Err(NnError::InvalidSpec("empty input".into()));
        }
        let mut shapes = vec![input];
        for layer in &layers {
            let next = layer.output_shape(*shapes.last().unwrap())?;
            shapes.push(next);
        }
        if layers.iter().filter(|l| l.has_params()).count() < 2 {
            return Err(NnError::InvalidSpec("need at least one hidden layer and an output layer".into()));
        }
        Ok(Self { input, layers, shapes })
    }

    pub fn input(&self) -> Shape {
        self.input
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Activation shapes; index 0 is the input, index `i` the output of
    /// layer `i` (1-based).
    pub fn shapes(&self) -> &[Shape] {
        &self.shapes
    }

    pub fn num_classes(&self) -> usize {
        self.shapes.last().unwrap().len()
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.input)?;
        for layer in &self.layers {
            write!(f, "-{layer}")?;
        }
        Ok(())
    }
}

fn parse_args(token: &str, name: &str, arity: usize) -> Option<Vec<usize>> {
    let inner = token.strip_prefix(name)?.trim_start().strip_prefix('(')?.strip_suffix(')')?;
    let args: Vec<usize> = inner.split(',').map(|a| a.trim().parse().ok()).collect::<Option<_>>()?;
    (args.len() == arity).then_some(args)
}

fn parse_layer(token: &str) -> Result<Layer, NnError> {
    let upper = token.to_ascii_uppercase();
    if let Some(a) = parse_args(&upper, "FC", 1) {
        return Ok(Layer::Dense(a[0]));
    }
    if let Some(a) = parse_args(&upper, "MP", 2) {
        return Ok(Layer::MaxPool { kernel: a[0], stride: a[1] });
    }
    if let Some(a) = parse_args(&upper, "C", 3) {
        return Ok(Layer::Conv3d { out_channels: a[0], kernel: a[1], stride: a[2] });
    }
    match upper.as_str() {
        "RELU" => Ok(Layer::Relu),
        "SIGMOID" => Ok(Layer::Sigmoid),
        _ => Err(NnError::InvalidSpec(format!("unrecognized layer `{token}`"))),
    }
}

fn parse_input(token: &str) -> Result<Shape, NnError> {
    let dims: Option<Vec<usize>> = token
        .split(['x', 'X', '×'])
        .map(|d| d.trim().parse().ok())
        .collect();
    match dims.as_deref() {
        Some([n]) => Ok(Shape::Flat(*n)),
        Some([c, h, w]) => Ok(Shape::Image { height: *h, width: *w, channels: *c }),
        _ => Err(NnError::InvalidSpec(format!("bad input shape `{token}`"))),
    }
}

impl FromStr for ModelSpec {
    type Err = NnError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut tokens = s.split('-').map(str::trim).filter(|t| !t.is_empty());
        let input = parse_input(tokens.next().ok_or_else(|| NnError::InvalidSpec("empty spec".into()))?)?;
        let layers = tokens.map(parse_layer).collect::<Result<Vec<_>, _>>()?;
        ModelSpec::new(input, layers)
    }
}

impl Serialize for ModelSpec {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ModelSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_mlp_and_cnn_architectures() {
        let mlp: ModelSpec = "784 - FC(512) - FC(512) - FC(10)".parse().unwrap();
        assert_eq!(mlp.layers(), &[Layer::Dense(512), Layer::Dense(512), Layer::Dense(10)]);
        assert_eq!(mlp.num_classes(), 10);

        let cnn: ModelSpec = "3×32×32 - C(32, 3, 2) - C(32, 3, 1) - MP(2, 1)
            - C(64, 3, 1) - C(64, 3, 1) - MP(2, 1) - FC(512) - FC(10)"
            .parse()
            .unwrap();
        assert_eq!(cnn.shapes()[1], Shape::Image { height: 15, width: 15, channels: 32 });
        assert_eq!(cnn.shapes()[3], Shape::Image { height: 12, width: 12, channels: 32 });
        assert_eq!(cnn.shapes()[6], Shape::Image { height: 7, width: 7, channels: 64 });
        assert_eq!(cnn.to_string(), "3x32x32-C(32,3,2)-C(32,3,1)-MP(2,1)-C(64,3,1)-C(64,3,1)-MP(2,1)-FC(512)-FC(10)");
    }

    #[test]
    fn display_round_trips() {
        for s in ["64-FC(32)-ReLU-FC(32)-ReLU-FC(4)", "1x8x8-C(4,3,1)-ReLU-MP(2,2)-FC(16)-Sigmoid-FC(10)"] {
            let spec: ModelSpec = s.parse().unwrap();
            assert_eq!(spec.to_string(), s);
            let json = serde_json::to_string(&spec).unwrap();
            assert_eq!(serde_json::from_str::<ModelSpec>(&json).unwrap(), spec);
        }
    }

    #[test]
    fn rejects_bad_specs() {
        for s in ["", "64", "64-FC(4)", "64-C(4,3,1)-FC(2)", "1x4x4-C(2,5,1)-FC(2)", "64-FC(8)-Tanh-FC(2)", "64-FC(0)-FC(2)"] {
            assert!(s.parse::<ModelSpec>().is_err(), "{s}");
        }
    }
}
