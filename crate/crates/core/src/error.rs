use thiserror::Error;

/// Every failure the library can report.
///
/// Variants are grouped by the module that raises them; the CLI maps the
/// whole enum onto exit code 3 and a JSON error object.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    // model
    #[error("jump kernel is empty: at least one nonzero offset with positive rate is required")]
    EmptyKernel,
    #[error("jump kernel is not symmetric: a({offset}) = {rate} but a(-{offset}) = {mirror}")]
    AsymmetricKernel {
        offset: String,
        rate: f64,
        mirror: f64,
    },
    #[error("jump kernel is reducible: its support generates a sublattice of index {index} and rank {rank} in Z^{dimension}")]
    ReducibleKernel {
        dimension: usize,
        rank: usize,
        index: i64,
    },
    #[error("invalid kernel entry: {0}")]
    InvalidKernel(String),
    #[error("invalid offspring law: {0}")]
    InvalidOffspring(String),
    #[error("invalid model parameter: {0}")]
    InvalidParameter(String),
    #[error("argument {name} = {value} lies outside {domain}")]
    OutOfDomain {
        name: &'static str,
        value: f64,
        domain: &'static str,
    },
    #[error("fractional order delta = {0} must lie strictly inside (0, 1) for the Klar integral")]
    DeltaOutOfRange(f64),
    #[error("series did not converge: {0}")]
    NonconvergentSeries(String),
    #[error("quadrature failed: {0}")]
    QuadratureFailure(String),

    // lattice
    #[error("Hessian of the kernel symbol is not negative definite")]
    SingularHessian,
    #[error("tolerance {tol:e} needs a grid of {needed} points, above the cap of {cap}")]
    ToleranceUnachievable { tol: f64, needed: u64, cap: u64 },
    #[error("Green's function at lambda = 0 diverges in dimension {0} (recurrent walk)")]
    DivergentGreen(usize),
    #[error("rho({site}) = {value} is not positive; the model violates the subcriticality premise")]
    NonpositiveRho { site: String, value: f64 },
    #[error("first-passage deconvolution unstable: {0}")]
    DeconvolutionInstability(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    // volterra
    #[error("invalid time grid: {0}")]
    InvalidGrid(String),
    #[error("step-halving disagreement {estimate:e} exceeds tolerance {tol:e}")]
    StepTooCoarse { estimate: f64, tol: f64 },
    #[error("fields live on different grids or lattice points: {0}")]
    GridMismatch(String),
    #[error("Laplace-transform denominator vanishes at lambda = {0} (critical or supercritical model)")]
    DenominatorVanishes(f64),
    #[error("survival field left [0, (1-s) m] at t = {t}: q = {q}, bound = {bound}")]
    BoundViolation { t: f64, q: f64, bound: f64 },
    #[error("fixed-point iteration diverged at t = {0}")]
    FixedPointDivergence(f64),
    #[error("tail bound {tail:e} exceeds 1% of the head integral {head:e}; increase the horizon")]
    TailBoundTooLarge { tail: f64, head: f64 },
    #[error("offspring law has no finite second factorial moment")]
    InfiniteSecondMoment,

    // asymptotics
    #[error("model is not subcritical ({0})")]
    NotSubcritical(String),
    #[error("asymptotic constant {name} = {value} is not positive")]
    NonpositiveConstant { name: String, value: f64 },
    #[error("survival constant {name} = {value} is not positive")]
    NonpositiveSurvivalConstant { name: String, value: f64 },
    #[error("conditional PGF limit has a degenerate denominator {0:e}")]
    DegenerateDenominator(f64),

    // montecarlo
    #[error("replicate {replicate} exceeded the particle cap of {cap}")]
    ParticleCapExceeded { replicate: u64, cap: usize },
    #[error("invalid seed or replicate range: {0}")]
    InvalidSeed(String),
    #[error("only {survivors} surviving replicates at t = {t}; at least {needed} are required")]
    InsufficientSurvivors { t: f64, survivors: u64, needed: u64 },
    #[error("cannot merge simulation results: {0}")]
    ConfigMismatch(String),

    // config
    #[error("{0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
