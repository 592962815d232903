//! Lists the DWDM slot pairs of the default plan with their CWDM-edge
//! transmission and marks the slots that cannot carry key.

use qkdlink::model::{channel_pair_transmission, transmission_to_loss, ChannelPlan};

fn main() -> qkdlink::Result<()> {
    let plan = ChannelPlan::default();
    let best = plan.dwdm_passband().powi(2);
    println!("slot  alice_nm  bob_nm    loss_a_dB  loss_b_dB  status");
    for slot in 1..=plan.slots {
        let s = plan.slot(slot)?;
        let (ta, tb) = channel_pair_transmission(&plan, slot)?;
        let status = if ta * tb < 0.01 * best { "dead" } else { "ok" };
        println!(
            "{slot:>4}  {:8.2}  {:8.2}  {:9.2}  {:9.2}  {status}",
            s.alice_nm(),
            s.bob_nm(),
            transmission_to_loss(ta)?,
            transmission_to_loss(tb)?
        );
    }
    Ok(())
}
