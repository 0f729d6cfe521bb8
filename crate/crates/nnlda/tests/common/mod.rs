//! Shared oracles and helpers for the acceptance suite.

use nnlda::corpus::SyntheticConfig;
use nnlda::numerics::{dirichlet_log_pdf, SimplexVector};
use std::collections::BTreeSet;

/// High-precision reference values (50-digit arithmetic, correctly
/// rounded to f64) for log-gamma and digamma on a log-spaced grid
/// covering 1e-2 ..= 1e2.
pub const LGAMMA_DIGAMMA_GRID: [(f64, f64, f64); 81] = [
    (0.01, 4.599479878042022, -100.56088545786868),
    (0.011220184543019636, 4.483667445790317, -89.68400283191619),
    (0.012589254117941675, 4.367774521501437, -79.98951902374507),
    (0.01412537544622754, 4.251792019177689, -71.34879562423606),
    (0.015848931924611134, 4.13570993169812, -63.64717736353511),
    (0.01778279410038923, 4.019517265805386, -56.782470799450245),
    (0.0199526231496888, 3.903201980955301, -50.663588389547606),
    (0.0223872113856834, 3.786750935366926, -45.20933995990305),
    (0.025118864315095794, 3.670149843687259, -40.34735554046516),
    (0.028183829312644536, 3.5533832520374316, -36.01312528148494),
    (0.03162277660168379, 3.436434537897841, -32.14914372063633),
    (0.03548133892335755, 3.3192859443899687, -28.704147056946073),
    (0.039810717055349734, 3.2019186611069266, -25.632433323882463),
    (0.0446683592150963, 3.0843129668301987, -22.893256456321662),
    (0.05011872336272722, 2.966448453357397, -20.450286229228105),
    (0.05623413251903491, 2.8483043543793722, -18.271126922749154),
    (0.06309573444801933, 2.7298600090216394, -16.32688835058374),
    (0.0707945784384138, 2.6110954964525717, -14.591803586184977),
    (0.07943282347242814, 2.491992486014283, -13.042888343654857),
    (0.08912509381337455, 2.372535356809597, -11.659637525067177),
    (0.1, 2.252712651734206, -10.423754940411076),
    (0.11220184543019636, 2.132518943719889, -9.318912646483499),
    (0.12589254117941676, 2.0119572065752447, -8.330536742166506),
    (0.1412537544622754, 1.8910417993687794, -7.445616804173212),
    (0.15848931924611134, 1.7698021918542663, -6.652536453483593),
    (0.1778279410038923, 1.6482875790112788, -5.9409228117675665),
    (0.19952623149688797, 1.5265725553534526, -5.301512842201413),
    (0.223872113856834, 1.4047640442157152, -4.726034773136806),
    (0.25118864315095796, 1.2830097037553443, -4.207102978997914),
    (0.28183829312644537, 1.1615080599367715, -3.7381248436851218),
    (0.31622776601683794, 1.040520647486643, -3.3132182611533207),
    (0.35481338923357547, 0.9203864730740254, -2.9271385396918137),
    (0.3981071705534973, 0.8015391514432523, -2.5752135752290526),
    (0.44668359215096304, 0.6845271059126701, -2.2532862495149324),
    (0.5011872336272722, 0.5700372709690164, -1.9576630960945027),
    (0.5623413251903491, 0.45892278847241913, -1.6850683648890479),
    (0.6309573444801934, 0.35223525245987375, -1.4326027081752937),
    (0.707945784384138, 0.2512621332003122, -1.1977058083838619),
    (0.7943282347242814, 0.15757010166283428, -0.9781223709520622),
    (0.8912509381337455, 0.07305508354949358, -0.771871010848406),
    (1.0, 0.0, -0.5772156649015329),
    (1.122018454301963, -0.05885869775231627, -0.39263925819683826),
    (1.2589254117941675, -0.10025441808051518, -0.2168194359801388),
    (1.412537544622754, -0.12030226075550057, -0.04860623820788722),
    (1.584893192461114, -0.11439757981615574, 0.11299836046055348),
    (1.7782794100389228, -0.07709930719365306, 0.2688590969549973),
    (1.9952623149688788, -0.001995773857909673, 0.4197242965505246),
    (2.23872113856834, 0.11844956516436275, 0.5662410305708356),
    (2.5118864315095797, 0.2930754684449337, 0.7089686206288616),
    (2.818382931264455, 0.5322266965012605, 0.8483905738311414),
    (3.1622776601683795, 0.8479881161762293, 0.9849250516272008),
    (3.5481338923357533, 1.2544535279937612, 1.1189339895918604),
    (3.981071705534973, 1.7680342389160109, 1.2507309947073089),
    (4.46683592150963, 2.4078131030961836, 1.3805881502264845),
    (5.011872336272725, 3.1959505501812537, 1.5087418564377486),
    (5.623413251903491, 4.158150028029238, 1.6353978296521636),
    (6.30957344480193, 5.324191319584936, 1.7607353727523944),
    (7.07945784384138, 6.728541369237566, 1.884911019894438),
    (7.943282347242813, 8.411053591606724, 2.008061646474309),
    (8.91250938133746, 10.41776815725323, 2.130307124048383),
    (10.0, 12.801827480081469, 2.251752589066721),
    (11.220184543019629, 15.62452309830411, 2.372490384366759),
    (12.589254117941675, 18.956492376658566, 2.492601723535894),
    (14.12537544622754, 22.87908599826387, 2.6121581205228237),
    (15.848931924611142, 27.485930101097296, 2.7312226202184764),
    (17.78279410038923, 32.88471019305621, 2.849850860052953),
    (19.952623149688787, 39.19920770368067, 2.9680919878586542),
    (22.3872113856834, 46.57162425960402, 3.085989457218975),
    (25.118864315095795, 55.165233572412525, 3.203581718147899),
    (28.18382931264455, 65.16740627858563, 3.320902818128241),
    (31.622776601683793, 76.79305925851986, 3.4379829261862627),
    (35.481338923357534, 90.28858798385518, 3.5548487907208783),
    (39.810717055349734, 105.93634841101913, 3.6715241401707823),
    (44.6683592150963, 124.05976398052789, 3.7880300342372704),
    (50.11872336272725, 145.02914353931004, 3.9043851722379816),
    (56.23413251903491, 169.26830763930676, 4.0206061642087585),
    (63.0957344480193, 197.26213386349625, 4.136707769565782),
    (70.79457843841381, 229.56514679817874, 4.252703107461637),
    (79.43282347242814, 266.81129524327696, 4.368603842395753),
    (89.12509381337459, 309.7250784970417, 4.484420348153848),
    (100.0, 359.1342053695754, 4.600161852738087),
];

/// Midpoint-rule integral of the Dirichlet density over the 2-simplex
/// (theta_3 = 1 - theta_1 - theta_2), on an n x n grid of square cells.
/// Accurate when every alpha entry exceeds 1, since the density then
/// vanishes on the boundary and partially covered cells contribute
/// next to nothing.
pub fn dirichlet3_normalization(alpha: &[f64; 3], n: usize) -> f64 {
    let h = 1.0 / n as f64;
    let mut total = 0.0;
    for i in 0..n {
        let t1 = (i as f64 + 0.5) * h;
        for j in 0..n {
            let t2 = (j as f64 + 0.5) * h;
            let t3 = 1.0 - t1 - t2;
            if t3 <= 0.0 {
                break;
            }
            let theta = SimplexVector::new(vec![t1, t2, t3]).expect("cell center on simplex");
            total += dirichlet_log_pdf(&theta, alpha).expect("finite density").exp();
        }
    }
    total * h * h
}

/// Exact log evidence of a two-topic document: the word likelihood is a
/// polynomial in theta of degree N (one linear factor per token), so the
/// integral against Beta(alpha_1, alpha_2) is a finite sum of Beta
/// moments E[theta^k] = prod_{j<k} (alpha_1 + j) / (alpha_1 + alpha_2 + j).
pub fn exact_two_topic_log_evidence(
    alpha: &[f64; 2],
    beta: &[Vec<f64>],
    counts: &[(u32, u32)],
) -> f64 {
    assert_eq!(beta.len(), 2);
    let mut poly = vec![1.0f64];
    for &(word, count) in counts {
        for _ in 0..count {
            let b = beta[1][word as usize];
            let a = beta[0][word as usize] - b;
            let mut next = vec![0.0; poly.len() + 1];
            for (k, &c) in poly.iter().enumerate() {
                next[k] += c * b;
                next[k + 1] += c * a;
            }
            poly = next;
        }
    }
    let mut evidence = 0.0;
    let mut moment = 1.0;
    for (k, &c) in poly.iter().enumerate() {
        evidence += c * moment;
        moment *= (alpha[0] + k as f64) / (alpha[0] + alpha[1] + k as f64);
    }
    evidence.ln()
}

/// Word sets of the default synthetic category bags, keyed by
/// (product, description).
pub fn default_bags() -> Vec<((String, String), BTreeSet<String>)> {
    SyntheticConfig::with_default_bags(1, 0)
        .bags
        .into_iter()
        .map(|bag| ((bag.product, bag.description), bag.words.into_iter().collect()))
        .collect()
}

/// Middle element (by value) of an odd-length sample.
pub fn median(values: &[f64]) -> f64 {
    assert!(values.len() % 2 == 1, "median wants an odd-length sample");
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    sorted[sorted.len() / 2]
}

/// Index of the sample whose value is the median.
pub fn median_index(values: &[f64]) -> usize {
    let m = median(values);
    values.iter().position(|&v| v == m).expect("median comes from the sample")
}
