//! Byte-level packet-serial front end for the emulated motor driver.
//!
//! Requests are `[address, command, payload..]`. Write commands carry a
//! CRC-16/XMODEM over address, command and payload and are answered with
//! `0xFF`. Read commands carry no CRC; the reply is the data followed by a
//! CRC over address, command and data.

use alloc::vec::Vec;

use crate::drive::{BatteryModel, MotorDriver};

pub const DEFAULT_ADDRESS: u8 = 0x80;
pub const ACK: u8 = 0xFF;

pub const CMD_READ_ENCODER_M1: u8 = 16;
pub const CMD_READ_ENCODER_M2: u8 = 17;
pub const CMD_READ_SPEED_M1: u8 = 18;
pub const CMD_READ_SPEED_M2: u8 = 19;
pub const CMD_READ_MAIN_BATTERY: u8 = 24;
pub const CMD_SET_SPEED_M1: u8 = 35;
pub const CMD_SET_SPEED_M2: u8 = 36;

pub fn crc16_xmodem(bytes: &[u8]) -> u16 {
    let mut crc: u16 = 0;
    for &b in bytes {
        crc ^= (b as u16) << 8;
        for _ in 0..8 {
            crc = if crc & 0x8000 != 0 { (crc << 1) ^ 0x1021 } else { crc << 1 };
        }
    }
    crc
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum PacketError {
    #[error("packet too short")]
    Truncated,
    #[error("packet for address {0:#04x}")]
    WrongAddress(u8),
    #[error("unsupported command {0}")]
    UnknownCommand(u8),
    #[error("CRC mismatch")]
    CrcMismatch,
}

/// Builds a set-speed request; `speed` is signed counts/s.
pub fn set_speed_request(address: u8, motor: usize, speed: i32) -> Vec<u8> {
    let cmd = if motor == 0 { CMD_SET_SPEED_M1 } else { CMD_SET_SPEED_M2 };
    let mut out = alloc::vec![address, cmd];
    out.extend_from_slice(&speed.to_be_bytes());
    let crc = crc16_xmodem(&out);
    out.extend_from_slice(&crc.to_be_bytes());
    out
}

/// Checks a read reply's trailing CRC and returns the data bytes.
pub fn verify_reply(address: u8, cmd: u8, reply: &[u8]) -> Result<&[u8], PacketError> {
    if reply.len() < 2 {
        return Err(PacketError::Truncated);
    }
    let (data, crc) = reply.split_at(reply.len() - 2);
    let mut covered = alloc::vec![address, cmd];
    covered.extend_from_slice(data);
    if crc16_xmodem(&covered) != u16::from_be_bytes([crc[0], crc[1]]) {
        return Err(PacketError::CrcMismatch);
    }
    Ok(data)
}

pub struct PacketSerial<'a> {
    pub address: u8,
    pub driver: &'a mut MotorDriver,
    pub battery: &'a BatteryModel,
}

impl PacketSerial<'_> {
    pub fn handle(&mut self, request: &[u8]) -> Result<Vec<u8>, PacketError> {
        let [address, cmd, rest @ ..] = request else {
            return Err(PacketError::Truncated);
        };
        if *address != self.address {
            return Err(PacketError::WrongAddress(*address));
        }
        match *cmd {
            CMD_SET_SPEED_M1 | CMD_SET_SPEED_M2 => {
                if rest.len() != 6 {
                    return Err(PacketError::Truncated);
                }
                let body = &request[..6];
                if crc16_xmodem(body) != u16::from_be_bytes([rest[4], rest[5]]) {
                    return Err(PacketError::CrcMismatch);
                }
                let speed = i32::from_be_bytes([rest[0], rest[1], rest[2], rest[3]]);
                let motor = (*cmd - CMD_SET_SPEED_M1) as usize;
                self.driver.set_speed(motor, speed as f64);
                Ok(alloc::vec![ACK])
            }
            CMD_READ_ENCODER_M1 | CMD_READ_ENCODER_M2 => {
                let motor = (*cmd - CMD_READ_ENCODER_M1) as usize;
                let count = self.driver.encoder(motor);
                let mut data = Vec::with_capacity(5);
                data.extend_from_slice(&(count as u32).to_be_bytes());
                data.push(if count < 0 { 0x02 } else { 0x00 });
                Ok(self.reply(*cmd, data))
            }
            CMD_READ_SPEED_M1 | CMD_READ_SPEED_M2 => {
                let motor = (*cmd - CMD_READ_SPEED_M1) as usize;
                let speed = self.driver.speed(motor);
                let mut data = Vec::with_capacity(5);
                data.extend_from_slice(&(crate::math::round(speed.abs()) as u32).to_be_bytes());
                data.push((speed < 0.0) as u8);
                Ok(self.reply(*cmd, data))
            }
            CMD_READ_MAIN_BATTERY => {
                let decivolts = crate::math::round(self.driver.voltage(self.battery) * 10.0) as u16;
                Ok(self.reply(*cmd, decivolts.to_be_bytes().to_vec()))
            }
            other => Err(PacketError::UnknownCommand(other)),
        }
    }

    fn reply(&self, cmd: u8, mut data: Vec<u8>) -> Vec<u8> {
        let mut covered = alloc::vec![self.address, cmd];
        covered.extend_from_slice(&data);
        data.extend_from_slice(&crc16_xmodem(&covered).to_be_bytes());
        data
    }
}
