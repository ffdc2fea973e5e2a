use pixadv_core::analysis::{summarize, write_csv, AttackRecord, MetricsRow};
use pixadv_core::attacks::transcript::{self, Record};
use pixadv_core::dataset::{load_idx, normalize, Normalization, Split};
use pixadv_core::nn::{accuracy, arch, io, train_toy, TrainConfig};
use pixadv_core::*;

/// Two classes on 6×6 images: label 1 when the left half is brighter.
fn idx_pair(n: usize) -> (Vec<u8>, Vec<u8>) {
    let mut images = vec![0, 0, 8, 3];
    for d in [n as u32, 6, 6] {
        images.extend(d.to_be_bytes());
    }
    let mut labels = vec![0, 0, 8, 1];
    labels.extend((n as u32).to_be_bytes());
    for i in 0..n {
        let left_bright = i % 2 == 0;
        for y in 0..6 {
            for x in 0..6 {
                let bright = (x < 3) == left_bright;
                let jitter = ((i * 7 + y * 5 + x * 3) % 40) as u8;
                images.push(if bright { 180 + jitter } else { 20 + jitter });
            }
        }
        labels.push(if left_bright { 0 } else { 1 });
    }
    (images, labels)
}

#[test]
fn train_attack_summarize() {
    let (img_bytes, label_bytes) = idx_pair(200);
    let raw = load_idx(&img_bytes, &label_bytes, Split::Train).unwrap();
    assert_eq!(raw.num_classes(), 10);
    let (data, stats) = normalize(&raw, Normalization::Fit).unwrap();
    let model = arch::linear(raw.shape(), raw.num_classes(), 3).unwrap();
    let cfg = TrainConfig {
        epochs: 5,
        ..TrainConfig::default()
    };
    let (model, _) = train_toy(model, &data, None, &cfg).unwrap();
    assert!(accuracy(&model, &data).unwrap() > 0.95);

    let reloaded = io::from_bytes(&io::to_bytes(&model)).unwrap();
    assert_eq!(reloaded, model);

    let mut records = Vec::new();
    let mut log = Vec::new();
    for (i, item) in data.iter().take(6).enumerate() {
        let mut session = OracleSession::new(&model);
        let base = session.query(&item.image).unwrap();
        let outcome = if i % 2 == 0 {
            loc_search_adv(&mut session, item, &LocSearchConfig { seed: i as u64, ..Default::default() }).unwrap()
        } else {
            rand_adv(&mut session, item, &RandAdvConfig { budget: 18, seed: i as u64, ..Default::default() }).unwrap()
        };
        assert_eq!(outcome.queries_used + 1, session.query_count());
        if let Some(adv) = &outcome.adversarial {
            assert!(is_k_misclassified(&model.forward(adv).unwrap(), item.label, 1).unwrap());
        }
        transcript::write(&mut log, i, item.label, &outcome).unwrap();
        records.push(AttackRecord {
            original: item.image.clone(),
            label: item.label,
            base,
            outcome: Some(outcome),
        });
    }
    let parsed = transcript::read(std::str::from_utf8(&log).unwrap()).unwrap();
    let outcomes = parsed.iter().filter(|r| matches!(r, Record::Outcome { .. })).count();
    assert_eq!(outcomes, 6);

    let metrics = summarize(&records, 1).unwrap();
    assert_eq!(metrics.n_attacked, 6);
    let mut csv = Vec::new();
    write_csv(&mut csv, &[MetricsRow {
        dataset: "halves".into(),
        technique: "mixed".into(),
        network: "linear".into(),
        metrics,
    }])
    .unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert!(text.starts_with("Dataset,ErrTop-1,ErrTop-1(Adv),conf,ptb,ptbpixels,time,Technique,Network\n"));
    assert_eq!(stats.channels(), 1);
}
